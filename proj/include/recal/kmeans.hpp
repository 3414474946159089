#pragma once

#include <cstdint>
#include <vector>

#include "recal/data.hpp"
#include "recal/metrics.hpp"
#include "recal/nn.hpp"

namespace recal {

struct KMeansResult {
  Tensor centroids;  // [K x d]
  ClusterAssignment assignment;
  double inertia = 0.0;
  std::size_t iterations = 0;     // Lloyd iterations of the winning restart
  std::size_t restarts_used = 0;
  std::vector<double> inertia_trace;  // per-iteration, winning restart
};

// Lloyd's algorithm with k-means++ initialization. Runs `restarts`
// independent inits and keeps the lowest-inertia result (ties keep the
// earliest restart). Iterates to an assignment fixed point or max_iter;
// an emptied cluster is reseeded to the point farthest from its assigned
// centroid.
KMeansResult kmeans_fit(const Tensor& points, std::size_t k,
                        std::size_t restarts = 10, std::size_t max_iter = 300,
                        std::uint64_t seed = 0);

// Eval-mode activations at the model's feature boundary, flattened to
// [N x d]. Deterministic; does not touch model state.
Tensor embed_dataset(Model& model, const Dataset& dataset);

}  // namespace recal
