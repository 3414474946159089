#pragma once

#include "recal/nn.hpp"
#include "recal/tensor.hpp"

namespace recal {

// Probabilities are clamped to [kEntropyClamp, 1] inside entropy terms so
// that saturated posteriors contribute 0 * log 0 = 0 with bounded gradients.
inline constexpr double kEntropyClamp = 1e-12;

struct LossBreakdown {
  Tensor h_phi;  // classification entropy, scalar in [0, ln K]
  Tensor h_psi;  // class entropy, scalar in [0, ln K]
  Tensor total;  // lambda * h_phi - h_psi
  double lambda = 1.0;
};

// Sum of p * log(p) over all entries (clamped log). This non-positive sum is
// the running quantity the macro-batch accumulator stores.
Tensor plogp_sum(const Tensor& probs);

// H_phi = -(1/M) sum_m sum_l p_ml log p_ml
Tensor classification_entropy(const ProbMatrix& p);

// p_l = sum_m p_ml / sum_l sum_m p_ml
Tensor class_marginal(const ProbMatrix& p);

// H_psi = -sum_l p_l log p_l; p_l must be a distribution (sums to 1
// within 1e-9, entries >= 0).
Tensor class_entropy(const Tensor& p_l);

// total = lambda * h_phi - h_psi. Shared by the direct loss and the
// macro-batch finalization so both produce bit-identical graphs.
LossBreakdown combine_recal_loss(Tensor h_phi, Tensor h_psi, double lambda);

LossBreakdown recal_loss(const ProbMatrix& p, double lambda);

}  // namespace recal
