#pragma once

#include <cstddef>
#include <vector>

#include "recal/nn.hpp"

namespace recal {

enum class Provenance { predicted, ground_truth, kmeans };

struct ClusterAssignment {
  std::vector<int> labels;  // each in [0, k)
  std::size_t k = 0;
  Provenance provenance = Provenance::predicted;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

struct ContingencyTable {
  std::vector<std::vector<std::size_t>> counts;  // k_a x k_b
  std::vector<std::size_t> row_marginals, col_marginals;
  std::size_t total = 0;

  static ContingencyTable build(const ClusterAssignment& a,
                                const ClusterAssignment& b);
};

// Row argmax of the posterior matrix; ties break to the lowest index.
ClusterAssignment assign_labels(const ProbMatrix& p);

// Normalized mutual information I(A;B)/sqrt(H(A) H(B)), natural log.
// Degenerate cases: two constant labelings (identical partitions) give 1.0;
// one constant labeling against a non-constant one gives 0.0.
double nmi(const ClusterAssignment& a, const ClusterAssignment& b);

// |m1 & m2| / |m1 | m2| over sample-index sets (inputs deduplicated).
// Both sets empty is defined as 0 with a warning.
double jaccard(const std::vector<std::size_t>& m1,
               const std::vector<std::size_t>& m2);

// Entry (i, j) is the Jaccard similarity between the samples model 1
// assigned to cluster i and the samples model 2 assigned to cluster j.
std::vector<std::vector<double>> cross_model_consensus(
    const ClusterAssignment& a1, const ClusterAssignment& a2, std::size_t k);

std::vector<std::size_t> cluster_histogram(const ClusterAssignment& a);

}  // namespace recal
