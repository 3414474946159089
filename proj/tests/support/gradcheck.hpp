#pragma once

// Central finite-difference gradient checking, independent of the autodiff
// path it verifies. `forward` must rebuild the computation from scratch on
// every call (values of `params` are perturbed in place between calls).

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "recal/tensor.hpp"

namespace recal::testing {

struct GradCheckResult {
  bool ok = true;
  std::string detail;  // first offending element, when any
  double worst_abs_err = 0.0;
};

inline GradCheckResult gradcheck(const std::function<recal::Tensor()>& forward,
                                 std::vector<recal::Tensor> params,
                                 double step = 1e-5, double abs_tol = 1e-6,
                                 double rel_tol = 1e-4) {
  GradCheckResult result;

  // Analytic pass.
  for (auto& p : params) p.zero_grad();
  recal::Tensor loss = forward();
  recal::backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    analytic.push_back(p.has_grad() ? p.grad()
                                    : std::vector<double>(p.numel(), 0.0));
  }

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& values = params[pi].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double plus = forward().value();
      values[i] = saved - step;
      const double minus = forward().value();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[pi][i];
      const double err = std::fabs(a - numeric);
      const double tol = std::max(abs_tol, rel_tol * std::fabs(a));
      if (err > result.worst_abs_err) result.worst_abs_err = err;
      if (err > tol && result.ok) {
        result.ok = false;
        result.detail = "param " + std::to_string(pi) + " element " +
                        std::to_string(i) + ": analytic " + std::to_string(a) +
                        " vs numeric " + std::to_string(numeric);
      }
    }
  }
  // Perturbation calls left nodes on the active record; drop them so later
  // backward calls in the same test do not walk stale graphs.
  recal::ComputationRecord::active().clear();
  return result;
}

}  // namespace recal::testing
