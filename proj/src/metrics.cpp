#include "recal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "recal/error.hpp"

namespace recal {

void ClusterAssignment::validate() const {
  if (labels.empty()) throw ContractError("cluster assignment is empty");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ContractError("cluster label " + std::to_string(labels[i]) +
                          " at index " + std::to_string(i) +
                          " outside [0, " + std::to_string(k) + ")");
    }
  }
}

ContingencyTable ContingencyTable::build(const ClusterAssignment& a,
                                         const ClusterAssignment& b) {
  if (a.size() != b.size()) {
    throw ContractError("assignments have different lengths: " +
                        std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
  }
  a.validate();
  b.validate();
  ContingencyTable table;
  table.counts.assign(a.k, std::vector<std::size_t>(b.k, 0));
  table.row_marginals.assign(a.k, 0);
  table.col_marginals.assign(b.k, 0);
  table.total = a.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++table.counts[a.labels[i]][b.labels[i]];
    ++table.row_marginals[a.labels[i]];
    ++table.col_marginals[b.labels[i]];
  }
  return table;
}

ClusterAssignment assign_labels(const ProbMatrix& p) {
  const std::size_t m = p.rows();
  const std::size_t k = p.cols();
  const auto& values = p.tensor().values();
  ClusterAssignment assignment;
  assignment.k = k;
  assignment.provenance = Provenance::predicted;
  assignment.labels.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (values[i * k + j] > values[i * k + best]) best = j;
    }
    assignment.labels[i] = static_cast<int>(best);
  }
  return assignment;
}

namespace {

double marginal_entropy(const std::vector<std::size_t>& counts, double n) {
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace

double nmi(const ClusterAssignment& a, const ClusterAssignment& b) {
  const ContingencyTable table = ContingencyTable::build(a, b);
  const double n = static_cast<double>(table.total);
  const double h_a = marginal_entropy(table.row_marginals, n);
  const double h_b = marginal_entropy(table.col_marginals, n);
  if (h_a == 0.0 && h_b == 0.0) return 1.0;  // identical single-cluster labelings
  if (h_a == 0.0 || h_b == 0.0) return 0.0;
  double info = 0.0;
  for (std::size_t i = 0; i < table.counts.size(); ++i) {
    for (std::size_t j = 0; j < table.counts[i].size(); ++j) {
      const std::size_t c = table.counts[i][j];
      if (c == 0) continue;
      info += (static_cast<double>(c) / n) *
              std::log(static_cast<double>(c) * n /
                       (static_cast<double>(table.row_marginals[i]) *
                        static_cast<double>(table.col_marginals[j])));
    }
  }
  return std::max(info, 0.0) / std::sqrt(h_a * h_b);
}

double jaccard(const std::vector<std::size_t>& m1,
               const std::vector<std::size_t>& m2) {
  std::vector<std::size_t> a(m1), b(m2);
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  if (a.empty() && b.empty()) {
    std::cerr << "warning: jaccard of two empty sets, defining as 0\n";
    return 0.0;
  }
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  return static_cast<double>(common) /
         static_cast<double>(a.size() + b.size() - common);
}

std::vector<std::vector<double>> cross_model_consensus(
    const ClusterAssignment& a1, const ClusterAssignment& a2, std::size_t k) {
  if (a1.k > k || a2.k > k) {
    throw ContractError("consensus cluster count " + std::to_string(k) +
                        " smaller than assignment label space");
  }
  ClusterAssignment wa = a1, wb = a2;
  wa.k = k;
  wb.k = k;
  const ContingencyTable table = ContingencyTable::build(wa, wb);
  std::vector<std::vector<double>> scores(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t inter = table.counts[i][j];
      const std::size_t uni =
          table.row_marginals[i] + table.col_marginals[j] - inter;
      scores[i][j] = uni == 0 ? 0.0
                              : static_cast<double>(inter) /
                                    static_cast<double>(uni);
    }
  }
  return scores;
}

std::vector<std::size_t> cluster_histogram(const ClusterAssignment& a) {
  a.validate();
  std::vector<std::size_t> histogram(a.k, 0);
  for (int label : a.labels) ++histogram[static_cast<std::size_t>(label)];
  return histogram;
}

}  // namespace recal
