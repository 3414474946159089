#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "recal/kmeans.hpp"
#include "recal/trainer.hpp"
#include "support/oracles.hpp"

using namespace recal;

TEST_CASE("each point its own cluster gives zero inertia") {
  Tensor points = Tensor::from_values({4, 2}, {0, 0, 1, 0, 0, 1, 5, 5});
  auto result = kmeans_fit(points, 4, 5, 100, 3);
  CHECK(result.inertia == doctest::Approx(0.0));
  // All four labels distinct.
  auto labels = result.assignment.labels;
  std::sort(labels.begin(), labels.end());
  CHECK(labels == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("two separated pairs in 1-D") {
  Tensor points = Tensor::from_values({4, 1}, {0.0, 0.1, 10.0, 10.1});
  auto result = kmeans_fit(points, 2, 5, 100, 7);
  CHECK(result.inertia == doctest::Approx(0.01).epsilon(1e-9));
  std::vector<double> centroids = result.centroids.values();
  std::sort(centroids.begin(), centroids.end());
  CHECK(centroids[0] == doctest::Approx(0.05));
  CHECK(centroids[1] == doctest::Approx(10.05));
  CHECK(result.assignment.labels[0] == result.assignment.labels[1]);
  CHECK(result.assignment.labels[2] == result.assignment.labels[3]);
  CHECK(result.assignment.labels[0] != result.assignment.labels[2]);
}

TEST_CASE("restarts find the brute-force global optimum on small instances") {
  Rng rng(601);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 5 + rng.below(4);  // 5..8 points
    testing::Matrix points(m, std::vector<double>(2));
    std::vector<double> flat;
    for (auto& p : points) {
      p[0] = rng.uniform(-4.0, 4.0);
      p[1] = rng.uniform(-4.0, 4.0);
      flat.push_back(p[0]);
      flat.push_back(p[1]);
    }
    const double global = testing::oracle_kmeans_best_inertia(points, 2);
    auto result = kmeans_fit(Tensor::from_values({m, 2}, flat), 2, 20, 100,
                             900 + static_cast<std::uint64_t>(trial));
    CHECK(result.inertia == doctest::Approx(global).epsilon(1e-9));
  }
}

TEST_CASE("contract violations") {
  Tensor points = Tensor::from_values({2, 1}, {0.0, 1.0});
  CHECK_THROWS_AS(kmeans_fit(points, 3, 5, 100, 0), ContractError);
  CHECK_THROWS_AS(kmeans_fit(points, 0, 5, 100, 0), ContractError);
  CHECK_THROWS_AS(kmeans_fit(Tensor::from_values({2}, {0.0, 1.0}), 1, 5, 100, 0),
                  ShapeError);
}

TEST_CASE("lloyd iterations never increase the inertia") {
  Rng rng(607);
  std::vector<double> flat(60 * 2);
  for (auto& v : flat) v = rng.uniform(-5.0, 5.0);
  auto result = kmeans_fit(Tensor::from_values({60, 2}, flat), 4, 3, 100, 11);
  for (std::size_t i = 1; i < result.inertia_trace.size(); ++i) {
    CHECK(result.inertia_trace[i] <= result.inertia_trace[i - 1] + 1e-12);
  }
  CHECK(result.iterations == result.inertia_trace.size());
}

TEST_CASE("labels stay in range and provenance is kmeans") {
  Dataset blobs = synth_blobs(30, 3, 2, 10.0, 1.0, 613);
  auto result = kmeans_fit(blobs.stack_all(), 3, 5, 100, 13);
  result.assignment.validate();
  CHECK(result.assignment.provenance == Provenance::kmeans);
  CHECK(result.assignment.k == 3);
}

TEST_CASE("point order does not change the best inertia on separated blobs") {
  Dataset blobs = synth_blobs(40, 3, 2, 12.0, 1.0, 617);
  Tensor points = blobs.stack_all();
  auto forward = kmeans_fit(points, 3, 10, 300, 17);

  // Reverse the point order.
  const std::size_t m = 120, d = 2;
  std::vector<double> reversed(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      reversed[i * d + j] = points.at((m - 1 - i) * d + j);
    }
  }
  auto backward_run = kmeans_fit(Tensor::from_values({m, d}, reversed), 3, 10,
                                 300, 17);
  CHECK(forward.inertia == doctest::Approx(backward_run.inertia).epsilon(1e-9));
}

TEST_CASE("well-separated blobs cluster to NMI >= 0.95") {
  // separation / sigma = 12
  Dataset blobs = synth_blobs(60, 3, 2, 12.0, 1.0, 619);
  auto result = kmeans_fit(blobs.stack_all(), 3, 10, 300, 19);
  ClusterAssignment truth{*blobs.labels, 3, Provenance::ground_truth};
  CHECK(nmi(result.assignment, truth) >= 0.95);
}

TEST_CASE("embed_dataset") {
  SUBCASE("identity feature layer returns the inputs") {
    Model model({LinearSpec{2, 2}, LinearSpec{2, 3}}, 1, {2}, 23);
    model.parameters()[0].tensor.mutable_values() = {1, 0, 0, 1};
    model.parameters()[1].tensor.mutable_values() = {0, 0};
    Dataset d;
    d.samples.push_back(Tensor::from_values({2}, {3.0, -1.0}));
    d.samples.push_back(Tensor::from_values({2}, {0.5, 2.0}));
    Tensor embedded = embed_dataset(model, d);
    CHECK(embedded.shape() == Shape{2, 2});
    CHECK(embedded.values() == std::vector<double>{3.0, -1.0, 0.5, 2.0});
  }
  SUBCASE("repeated calls are identical and mode is restored") {
    Model model = build_model("mlp:6", {2}, 3, true, true, 29);
    model.set_mode(Mode::train);
    Dataset blobs = synth_blobs(10, 3, 2, 8.0, 1.0, 631);
    Tensor a = embed_dataset(model, blobs);
    Tensor b = embed_dataset(model, blobs);
    CHECK(a.values() == b.values());
    CHECK(model.mode() == Mode::train);
  }
  SUBCASE("conv embeddings come out flattened") {
    Model model = build_model("conv:4", {1, 8, 8}, 2, true, true, 31);
    Dataset d;
    d.samples.push_back(Tensor::full({1, 8, 8}, 0.3));
    d.samples.push_back(Tensor::full({1, 8, 8}, 0.7));
    Tensor embedded = embed_dataset(model, d);
    CHECK(embedded.shape() == Shape{2, 4 * 4 * 4});
  }
}
