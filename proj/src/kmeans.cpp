#include "recal/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace recal {

namespace {

double squared_distance(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    acc += diff * diff;
  }
  return acc;
}

struct LloydRun {
  std::vector<double> centroids;
  std::vector<int> assignment;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> trace;
};

std::vector<double> kmeanspp_init(const std::vector<double>& x, std::size_t m,
                                  std::size_t d, std::size_t k, Rng& rng) {
  std::vector<double> centroids(k * d);
  std::vector<double> dist2(m, std::numeric_limits<double>::max());

  std::size_t first = static_cast<std::size_t>(rng.below(m));
  std::copy_n(&x[first * d], d, &centroids[0]);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      dist2[i] = std::min(dist2[i],
                          squared_distance(&x[i * d], &centroids[(c - 1) * d], d));
      total += dist2[i];
    }
    std::size_t chosen;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double cumulative = 0.0;
      chosen = m - 1;
      for (std::size_t i = 0; i < m; ++i) {
        cumulative += dist2[i];
        if (cumulative >= target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = static_cast<std::size_t>(rng.below(m));  // all points coincide
    }
    std::copy_n(&x[chosen * d], d, &centroids[c * d]);
  }
  return centroids;
}

LloydRun lloyd(const std::vector<double>& x, std::size_t m, std::size_t d,
               std::size_t k, std::size_t max_iter, Rng& rng) {
  LloydRun run;
  run.centroids = kmeanspp_init(x, m, d, k, rng);
  run.assignment.assign(m, -1);

  std::vector<int> next(m, 0);
  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    // Assignment phase; ties go to the lowest centroid index.
    double inertia = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double best = squared_distance(&x[i * d], &run.centroids[0], d);
      std::size_t best_c = 0;
      for (std::size_t c = 1; c < k; ++c) {
        const double dist = squared_distance(&x[i * d], &run.centroids[c * d], d);
        if (dist < best) {
          best = dist;
          best_c = c;
        }
      }
      next[i] = static_cast<int>(best_c);
      inertia += best;
    }
    run.iterations = iter + 1;
    run.trace.push_back(inertia);
    run.inertia = inertia;
    if (next == run.assignment) break;  // fixed point
    run.assignment = next;

    // Update phase.
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0u);
    for (std::size_t i = 0; i < m; ++i) {
      const auto c = static_cast<std::size_t>(run.assignment[i]);
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += x[i * d + j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Reseed to the point farthest from its assigned centroid.
        double worst = -1.0;
        std::size_t farthest = 0;
        for (std::size_t i = 0; i < m; ++i) {
          const auto ci = static_cast<std::size_t>(run.assignment[i]);
          const double dist =
              squared_distance(&x[i * d], &run.centroids[ci * d], d);
          if (dist > worst) {
            worst = dist;
            farthest = i;
          }
        }
        std::copy_n(&x[farthest * d], d, &run.centroids[c * d]);
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) {
        run.centroids[c * d + j] =
            sums[c * d + j] / static_cast<double>(counts[c]);
      }
    }
  }
  return run;
}

}  // namespace

KMeansResult kmeans_fit(const Tensor& points, std::size_t k,
                        std::size_t restarts, std::size_t max_iter,
                        std::uint64_t seed) {
  if (!points.defined() || points.ndim() != 2) {
    throw ShapeError("kmeans_fit expects an [M x d] matrix" +
                     (points.defined() ? ", got " + shape_str(points.shape())
                                       : std::string()));
  }
  const std::size_t m = points.shape()[0];
  const std::size_t d = points.shape()[1];
  if (k == 0 || m < k) {
    throw ContractError("kmeans_fit needs at least k points (" +
                        std::to_string(m) + " < " + std::to_string(k) + ")");
  }
  if (restarts == 0) throw ContractError("kmeans_fit needs restarts >= 1");

  const auto& x = points.values();
  Rng rng(seed);
  LloydRun best;
  bool have_best = false;
  for (std::size_t r = 0; r < restarts; ++r) {
    LloydRun run = lloyd(x, m, d, k, max_iter, rng);
    if (!have_best || run.inertia < best.inertia) {
      best = std::move(run);
      have_best = true;
    }
  }

  KMeansResult result;
  result.centroids = Tensor::from_values({k, d}, std::move(best.centroids));
  result.assignment.labels = std::move(best.assignment);
  result.assignment.k = k;
  result.assignment.provenance = Provenance::kmeans;
  result.inertia = best.inertia;
  result.iterations = best.iterations;
  result.restarts_used = restarts;
  result.inertia_trace = std::move(best.trace);
  return result;
}

Tensor embed_dataset(Model& model, const Dataset& dataset) {
  dataset.validate();
  const Mode saved = model.mode();
  model.set_mode(Mode::eval);
  NoGradScope guard;

  std::vector<double> rows;
  std::size_t width = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
    const std::size_t stop = std::min(dataset.size(), start + kChunk);
    std::vector<std::size_t> indices(stop - start);
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = start + i;
    Tensor embedding;
    model.forward(dataset.stack(indices), &embedding);
    const std::size_t batch = stop - start;
    width = embedding.numel() / batch;
    const auto& v = embedding.values();
    rows.insert(rows.end(), v.begin(), v.end());
  }
  model.set_mode(saved);
  return Tensor::from_values({dataset.size(), width}, std::move(rows));
}

}  // namespace recal
