#pragma once

#include <optional>
#include <string>

#include "recal/data.hpp"
#include "recal/nn.hpp"

namespace recal {

// RCLM checkpoint container: magic "RCLM", format version u32 LE, input
// sample shape, feature boundary, the layer spec list, then named tensors
// in declaration order (name length + name + ndim + dims + raw little-
// endian float64). Round-trips are bit-exact. Dataset normalization
// statistics ride along as the entries "norm.mu" / "norm.sigma" so
// inference can reuse them.
void save_checkpoint(const Model& model, const std::optional<NormStats>& stats,
                     const std::string& path);

struct Checkpoint {
  Model model;
  std::optional<NormStats> stats;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace recal
