#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "recal/data.hpp"
#include "recal/loss.hpp"
#include "recal/metrics.hpp"
#include "recal/nn.hpp"

namespace recal {

// How gradients flow through the macro-batch accumulator.
//   literal: earlier micro-batch contributions are folded into plain
//            constants; only the final micro-batch's graph is
//            differentiated (constant memory, biased gradients).
//   exact:   every micro-batch graph is retained; the gradient equals the
//            single-big-batch gradient (memory grows with the step count).
enum class AccumMode { literal, exact };

AccumMode parse_accum_mode(const std::string& text);
const char* to_string(AccumMode mode);

struct TrainConfig {
  std::size_t k = 2;
  double lambda = 1.0;
  double lr = 1e-4;
  double momentum = 0.9;
  std::size_t micro_batch = 32;   // M
  std::size_t accum_steps = 1;    // t micro-batches per parameter update
  std::size_t max_epochs = 200;
  double convergence_tol = 1e-4;
  std::uint64_t seed = 0;
  AccumMode accum_mode = AccumMode::exact;

  void validate() const;
};

struct SgdState {
  std::vector<std::vector<double>> velocity;  // parallel to model parameters
  static SgdState for_model(const Model& model);
};

// v <- momentum * v + g; theta <- theta - lr * v; gradients cleared.
void sgd_step(Model& model, SgdState& state, double lr, double momentum);

// Running sufficient statistics of a macro-batch: one scalar (sum of
// p log p), one K-vector (column sums of p) and the sample count.
class MacroBatchAccumulator {
 public:
  MacroBatchAccumulator(std::size_t k, AccumMode mode);

  // Adds one micro-batch's statistics. In literal mode the previously
  // retained micro-batch is folded into plain constants first, so at any
  // time at most one micro-batch graph is referenced.
  void accumulate(const ProbMatrix& p);

  // Assembles the macro-batch loss from the accumulated statistics
  // (H_phi = -h_phi/count, p_l = h_psi / sum h_psi). State error when
  // nothing was accumulated.
  LossBreakdown build_loss(double lambda) const;

  void reset();

  std::size_t k() const { return k_; }
  AccumMode mode() const { return mode_; }
  std::size_t count() const { return count_; }
  // Current running values (constants plus the pending contribution).
  double h_phi_running() const;
  std::vector<double> h_psi_running() const;
  // The constant-memory scheme stores exactly k+1 numeric accumulators.
  std::size_t numeric_state_size() const { return k_ + 1; }

 private:
  std::size_t k_;
  AccumMode mode_;
  std::size_t count_ = 0;
  std::size_t folded_batches_ = 0;
  double folded_phi_ = 0.0;             // literal: displaced contributions
  std::vector<double> folded_psi_;
  Tensor phi_pending_;  // exact: running tensor sum; literal: latest only
  Tensor psi_pending_;
};

// One Algorithm-1 step: forward, two-entropy loss, backward, SGD update.
LossBreakdown train_step_simple(Model& model, const Tensor& batch,
                                SgdState& opt, const TrainConfig& cfg);

// Algorithm-2 then-branch: build the loss from the accumulator, backward
// (through all retained graphs in exact mode, the final micro-batch in
// literal mode), update parameters, reset the accumulator.
LossBreakdown finalize_macrobatch(MacroBatchAccumulator& acc, Model& model,
                                  SgdState& opt, const TrainConfig& cfg);

struct EpochStats {
  std::size_t epoch = 0;
  double h_phi = 0.0;
  double h_psi = 0.0;
  double loss = 0.0;
  std::optional<double> nmi;  // vs ground truth, when labels exist
  std::size_t empty_clusters = 0;
};

struct TrainResult {
  std::vector<EpochStats> history;
};

// Epochs of shuffled macro-batches until the mean epoch loss moves less
// than convergence_tol (relative, 1 + |previous| scale) for 3 consecutive
// epochs, or max_epochs.
TrainResult train(Model& model, const Dataset& dataset, const TrainConfig& cfg);

// Whole-dataset argmax predictions in eval mode (no recording, no state
// mutation).
ClusterAssignment predict_labels(Model& model, const Dataset& dataset);

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::string& path);

}  // namespace recal
