#include "recal/loss.hpp"

#include <cmath>

namespace recal {

Tensor plogp_sum(const Tensor& probs) {
  return sum(mul(probs, log_clamped(probs, kEntropyClamp)));
}

Tensor classification_entropy(const ProbMatrix& p) {
  const double m = static_cast<double>(p.rows());
  return neg(div(plogp_sum(p.tensor()), Tensor::scalar(m)));
}

Tensor class_marginal(const ProbMatrix& p) {
  Tensor column_sums = sum(p.tensor(), 0);
  return div(column_sums, sum(column_sums));
}

Tensor class_entropy(const Tensor& p_l) {
  if (p_l.ndim() != 1) {
    throw ShapeError("class_entropy expects a K-vector, got " +
                     shape_str(p_l.shape()));
  }
  double total = 0.0;
  for (double v : p_l.values()) {
    if (v < -1e-12) {
      throw DomainError("class_entropy: negative probability " +
                        std::to_string(v));
    }
    total += v;
  }
  if (std::fabs(total - 1.0) > 1e-9) {
    throw DomainError("class_entropy: probabilities sum to " +
                      std::to_string(total));
  }
  return neg(plogp_sum(p_l));
}

LossBreakdown combine_recal_loss(Tensor h_phi, Tensor h_psi, double lambda) {
  if (!(lambda > 0.0)) {
    throw ConfigError("loss weight lambda must be positive, got " +
                      std::to_string(lambda));
  }
  Tensor total = sub(mul(Tensor::scalar(lambda), h_phi), h_psi);
  return LossBreakdown{std::move(h_phi), std::move(h_psi), std::move(total),
                       lambda};
}

LossBreakdown recal_loss(const ProbMatrix& p, double lambda) {
  Tensor h_phi = classification_entropy(p);
  Tensor h_psi = class_entropy(class_marginal(p));
  return combine_recal_loss(std::move(h_phi), std::move(h_psi), lambda);
}

}  // namespace recal
