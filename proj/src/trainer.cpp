#include "recal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "recal/text.hpp"

namespace recal {

AccumMode parse_accum_mode(const std::string& text) {
  if (text == "literal") return AccumMode::literal;
  if (text == "exact") return AccumMode::exact;
  throw ConfigError("unknown accumulation mode '" + text +
                    "' (expected literal or exact)");
}

const char* to_string(AccumMode mode) {
  return mode == AccumMode::literal ? "literal" : "exact";
}

void TrainConfig::validate() const {
  if (k < 1) throw ConfigError("cluster count k must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("momentum must be in [0, 1)");
  }
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (accum_steps < 1) throw ConfigError("accum_steps must be >= 1");
  if (micro_batch < 1) throw ConfigError("micro_batch must be >= 1");
  if (micro_batch * accum_steps < k) {
    throw ConfigError("macro-batch " + std::to_string(micro_batch * accum_steps) +
                      " cannot witness all " + std::to_string(k) + " clusters");
  }
  if (!(convergence_tol >= 0.0)) {
    throw ConfigError("convergence tolerance must be >= 0");
  }
}

// ---------------------------------------------------------------------------
// SGD with momentum

SgdState SgdState::for_model(const Model& model) {
  SgdState state;
  state.velocity.reserve(model.parameters().size());
  for (const auto& p : model.parameters()) {
    state.velocity.emplace_back(p.tensor.numel(), 0.0);
  }
  return state;
}

void sgd_step(Model& model, SgdState& state, double lr, double momentum) {
  auto& params = model.parameters();
  if (state.velocity.size() != params.size()) {
    throw ContractError("optimizer state does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor;
    if (!p.has_grad()) {
      throw ContractError("sgd_step: parameter " + params[i].name +
                          " has no gradient");
    }
    const auto& g = p.grad();
    auto& v = state.velocity[i];
    auto& theta = p.mutable_values();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      v[j] = momentum * v[j] + g[j];
      theta[j] -= lr * v[j];
    }
    p.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Macro-batch accumulation

MacroBatchAccumulator::MacroBatchAccumulator(std::size_t k, AccumMode mode)
    : k_(k), mode_(mode), folded_psi_(k, 0.0) {
  if (k_ == 0) throw ContractError("accumulator needs k >= 1");
}

void MacroBatchAccumulator::accumulate(const ProbMatrix& p) {
  if (p.cols() != k_) {
    throw ShapeError("accumulate: got " + std::to_string(p.cols()) +
                     " columns, accumulator tracks " + std::to_string(k_));
  }
  Tensor contrib_phi = plogp_sum(p.tensor());
  Tensor contrib_psi = sum(p.tensor(), 0);
  if (!phi_pending_.defined()) {
    phi_pending_ = std::move(contrib_phi);
    psi_pending_ = std::move(contrib_psi);
  } else if (mode_ == AccumMode::exact) {
    phi_pending_ = add(phi_pending_, contrib_phi);
    psi_pending_ = add(psi_pending_, contrib_psi);
  } else {
    // Fold the displaced micro-batch into the K+1 plain accumulators; its
    // graph is no longer referenced from here.
    folded_phi_ += phi_pending_.value();
    const auto& psi = psi_pending_.values();
    for (std::size_t j = 0; j < k_; ++j) folded_psi_[j] += psi[j];
    ++folded_batches_;
    phi_pending_ = std::move(contrib_phi);
    psi_pending_ = std::move(contrib_psi);
  }
  count_ += p.rows();
}

LossBreakdown MacroBatchAccumulator::build_loss(double lambda) const {
  if (count_ == 0 || !phi_pending_.defined()) {
    throw StateError("finalize on an empty accumulator");
  }
  Tensor phi_total = phi_pending_;
  Tensor psi_total = psi_pending_;
  if (folded_batches_ > 0) {
    phi_total = add(Tensor::scalar(folded_phi_), phi_total);
    psi_total = add(Tensor::from_values({k_}, folded_psi_), psi_total);
  }
  Tensor h_phi =
      neg(div(phi_total, Tensor::scalar(static_cast<double>(count_))));
  Tensor p_l = div(psi_total, sum(psi_total));
  Tensor h_psi = class_entropy(p_l);
  return combine_recal_loss(std::move(h_phi), std::move(h_psi), lambda);
}

void MacroBatchAccumulator::reset() {
  count_ = 0;
  folded_batches_ = 0;
  folded_phi_ = 0.0;
  folded_psi_.assign(k_, 0.0);
  phi_pending_ = Tensor();
  psi_pending_ = Tensor();
}

double MacroBatchAccumulator::h_phi_running() const {
  return folded_phi_ + (phi_pending_.defined() ? phi_pending_.value() : 0.0);
}

std::vector<double> MacroBatchAccumulator::h_psi_running() const {
  std::vector<double> psi = folded_psi_;
  if (psi_pending_.defined()) {
    const auto& pending = psi_pending_.values();
    for (std::size_t j = 0; j < k_; ++j) psi[j] += pending[j];
  }
  return psi;
}

// ---------------------------------------------------------------------------
// Steps

namespace {

std::string logits_diagnostics(const Tensor& logits) {
  if (!logits.defined()) return "logits unavailable";
  double lo = logits.at(0), hi = logits.at(0), mean = 0.0;
  std::size_t non_finite = 0;
  for (double v : logits.values()) {
    if (!std::isfinite(v)) {
      ++non_finite;
      continue;
    }
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    mean += v;
  }
  mean /= static_cast<double>(logits.numel());
  return "logits min=" + format_double(lo) + " max=" + format_double(hi) +
         " mean=" + format_double(mean) +
         " non_finite=" + std::to_string(non_finite);
}

[[noreturn]] void abort_training(const std::string& reason,
                                 const Tensor& logits) {
  throw NumericError("training aborted: " + reason + " (" +
                     logits_diagnostics(logits) + ")");
}

void check_finite_loss(const LossBreakdown& breakdown, const Tensor& logits) {
  if (!std::isfinite(breakdown.total.value())) {
    abort_training("non-finite loss", logits);
  }
}

}  // namespace

LossBreakdown train_step_simple(Model& model, const Tensor& batch,
                                SgdState& opt, const TrainConfig& cfg) {
  const std::size_t m = batch.shape()[0];
  if (m < cfg.k) {
    std::cerr << "warning: batch of " << m << " samples cannot witness all "
              << cfg.k << " clusters\n";
  }
  ComputationRecord record;
  RecordScope scope(record);
  Tensor logits;
  try {
    logits = model.forward(batch);
    LossBreakdown breakdown = recal_loss(softmax_rows(logits), cfg.lambda);
    check_finite_loss(breakdown, logits);
    backward(breakdown.total);
    sgd_step(model, opt, cfg.lr, cfg.momentum);
    return breakdown;
  } catch (const DomainError& error) {
    abort_training(error.what(), logits);
  }
}

LossBreakdown finalize_macrobatch(MacroBatchAccumulator& acc, Model& model,
                                  SgdState& opt, const TrainConfig& cfg) {
  LossBreakdown breakdown = acc.build_loss(cfg.lambda);
  check_finite_loss(breakdown, Tensor());
  backward(breakdown.total);
  sgd_step(model, opt, cfg.lr, cfg.momentum);
  acc.reset();
  return breakdown;
}

// ---------------------------------------------------------------------------
// Prediction

ClusterAssignment predict_labels(Model& model, const Dataset& dataset) {
  dataset.validate();
  const Mode saved = model.mode();
  model.set_mode(Mode::eval);
  NoGradScope guard;

  ClusterAssignment assignment;
  assignment.k = model.output_dim();
  assignment.provenance = Provenance::predicted;
  assignment.labels.reserve(dataset.size());
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
    const std::size_t stop = std::min(dataset.size(), start + kChunk);
    std::vector<std::size_t> indices(stop - start);
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = start + i;
    auto chunk_labels =
        assign_labels(softmax_rows(model.forward(dataset.stack(indices))));
    assignment.labels.insert(assignment.labels.end(),
                             chunk_labels.labels.begin(),
                             chunk_labels.labels.end());
  }
  model.set_mode(saved);
  return assignment;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

// Splits `span` samples into micro-batches of `micro`, merging a trailing
// single sample into its neighbour so batch-norm never sees a 1-batch.
std::vector<std::pair<std::size_t, std::size_t>> micro_ranges(
    std::size_t begin, std::size_t end, std::size_t micro) {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (std::size_t at = begin; at < end; at += micro) {
    ranges.emplace_back(at, std::min(end, at + micro));
  }
  if (ranges.size() >= 2 && ranges.back().second - ranges.back().first == 1) {
    ranges[ranges.size() - 2].second = end;
    ranges.pop_back();
  }
  return ranges;
}

}  // namespace

TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  dataset.validate();
  if (model.output_dim() != cfg.k) {
    throw ConfigError("model produces " + std::to_string(model.output_dim()) +
                      " clusters but the config asks for " +
                      std::to_string(cfg.k));
  }

  const std::size_t n = dataset.size();
  const std::size_t macro = cfg.micro_batch * cfg.accum_steps;
  SgdState opt = SgdState::for_model(model);
  Rng shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  TrainResult result;
  double previous_loss = 0.0;
  std::size_t stable_epochs = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    model.set_mode(Mode::train);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0, phi_sum = 0.0, psi_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t begin = 0; begin < n; begin += macro) {
      const std::size_t end = std::min(n, begin + macro);
      if (end - begin == 1 && model.has_batchnorm()) {
        std::cerr << "warning: dropping a stray single-sample macro-batch\n";
        continue;
      }
      const auto ranges = micro_ranges(begin, end, cfg.micro_batch);
      MacroBatchAccumulator acc(cfg.k, cfg.accum_mode);
      LossBreakdown breakdown;

      if (cfg.accum_mode == AccumMode::exact) {
        ComputationRecord record;
        RecordScope scope(record);
        for (const auto& [lo, hi] : ranges) {
          std::vector<std::size_t> batch_idx(order.begin() + lo,
                                             order.begin() + hi);
          Tensor logits;
          try {
            logits = model.forward(dataset.stack(batch_idx));
            acc.accumulate(softmax_rows(logits));
          } catch (const DomainError& error) {
            abort_training(error.what(), logits);
          }
        }
        breakdown = finalize_macrobatch(acc, model, opt, cfg);
      } else {
        // One record per micro-batch: displaced graphs are dropped with
        // their record, keeping memory constant in the step count.
        for (std::size_t r = 0; r + 1 < ranges.size(); ++r) {
          ComputationRecord record;
          RecordScope scope(record);
          std::vector<std::size_t> batch_idx(order.begin() + ranges[r].first,
                                             order.begin() + ranges[r].second);
          Tensor logits;
          try {
            logits = model.forward(dataset.stack(batch_idx));
            acc.accumulate(softmax_rows(logits));
          } catch (const DomainError& error) {
            abort_training(error.what(), logits);
          }
        }
        ComputationRecord record;
        RecordScope scope(record);
        const auto& last = ranges.back();
        std::vector<std::size_t> batch_idx(order.begin() + last.first,
                                           order.begin() + last.second);
        Tensor logits;
        try {
          logits = model.forward(dataset.stack(batch_idx));
          acc.accumulate(softmax_rows(logits));
        } catch (const DomainError& error) {
          abort_training(error.what(), logits);
        }
        breakdown = finalize_macrobatch(acc, model, opt, cfg);
      }

      const std::size_t step_count = end - begin;
      loss_sum += breakdown.total.value() * static_cast<double>(step_count);
      phi_sum += breakdown.h_phi.value() * static_cast<double>(step_count);
      psi_sum += breakdown.h_psi.value() * static_cast<double>(step_count);
      counted += step_count;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(counted);
    stats.h_phi = phi_sum / static_cast<double>(counted);
    stats.h_psi = psi_sum / static_cast<double>(counted);
    if (!std::isfinite(stats.loss)) {
      abort_training("non-finite epoch loss", Tensor());
    }

    ClusterAssignment predicted = predict_labels(model, dataset);
    const auto histogram = cluster_histogram(predicted);
    stats.empty_clusters = static_cast<std::size_t>(
        std::count(histogram.begin(), histogram.end(), 0u));
    if (stats.empty_clusters > 0) {
      std::cerr << "warning: epoch " << epoch << " left "
                << stats.empty_clusters << " clusters empty\n";
    }
    if (dataset.labels) {
      ClusterAssignment truth{*dataset.labels, cfg.k, Provenance::ground_truth};
      int max_label = 0;
      for (int l : truth.labels) max_label = std::max(max_label, l);
      truth.k = std::max<std::size_t>(cfg.k, static_cast<std::size_t>(max_label) + 1);
      stats.nmi = nmi(predicted, truth);
    }
    result.history.push_back(stats);

    if (epoch > 1) {
      const double delta = std::fabs(stats.loss - previous_loss);
      if (delta < cfg.convergence_tol * (1.0 + std::fabs(previous_loss))) {
        ++stable_epochs;
      } else {
        stable_epochs = 0;
      }
      if (stable_epochs >= 3) {
        previous_loss = stats.loss;
        break;
      }
    }
    previous_loss = stats.loss;
  }
  return result;
}

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << "epoch,h_phi,h_psi,loss,nmi_vs_ground_truth,empty_clusters\n";
  for (const auto& stats : history) {
    out << stats.epoch << ',' << format_double(stats.h_phi) << ','
        << format_double(stats.h_psi) << ',' << format_double(stats.loss) << ',';
    if (stats.nmi) out << format_double(*stats.nmi);
    out << ',' << stats.empty_clusters << '\n';
  }
  if (!out) throw FormatError("write failed for " + path);
}

}  // namespace recal
