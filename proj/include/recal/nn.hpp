#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "recal/rng.hpp"
#include "recal/tensor.hpp"

namespace recal {

struct LinearSpec {
  std::size_t in = 0, out = 0;
};
struct Conv2dSpec {
  std::size_t in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 0;
};
struct BatchNormSpec {
  std::size_t features = 0;
};
struct ReluSpec {};
struct FlattenSpec {};

using LayerSpec =
    std::variant<LinearSpec, Conv2dSpec, BatchNormSpec, ReluSpec, FlattenSpec>;

enum class Mode { train, eval };

struct BatchNormState {
  Tensor gamma, beta;              // learnable, per feature
  Tensor running_mean, running_var;  // inference statistics, per feature
  double eps = 1e-5;
  double momentum = 0.1;
};

// Row-stochastic posterior matrix (each row a distribution over K classes).
class ProbMatrix {
 public:
  static ProbMatrix from_tensor(Tensor values);
  const Tensor& tensor() const { return values_; }
  std::size_t rows() const { return values_.shape()[0]; }
  std::size_t cols() const { return values_.shape()[1]; }

 private:
  explicit ProbMatrix(Tensor values) : values_(std::move(values)) {}
  Tensor values_;
};

// Uniform init in +-sqrt(6 / (fan_in + fan_out)). Shape must have >= 2 dims;
// trailing dims beyond the first two count as receptive field.
Tensor xavier_init(const Shape& shape, Rng& rng);

// x[MxD] . weight[DxK] + bias[K]
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Cross-correlation (no kernel flip). input [MxCxHxW], weight [C'xCxkxk],
// bias [C']; implicit zero padding of `pad` on each border.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, std::size_t stride, std::size_t pad);

// Train mode normalizes with batch statistics (biased variance) and updates
// the running statistics; eval mode uses the running statistics unchanged.
Tensor batchnorm_forward(const Tensor& input, BatchNormState& state, Mode mode);

// Row-wise stable softmax (max subtraction), differentiable.
ProbMatrix softmax_rows(const Tensor& logits);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered layer stack: feature extractor up to feature_boundary, classifier
// head after it. Output of forward() are the K logits fed to softmax_rows.
class Model {
 public:
  Model(std::vector<LayerSpec> specs, std::size_t feature_boundary,
        Shape input_shape, std::uint64_t seed);

  Tensor forward(const Tensor& batch) { return forward(batch, nullptr); }
  // When `embedding` is non-null it receives the activation entering the
  // classifier head (the f_theta1 output).
  Tensor forward(const Tensor& batch, Tensor* embedding);

  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }
  std::size_t feature_boundary() const { return feature_boundary_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t output_dim() const { return output_dim_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  bool has_batchnorm() const { return has_batchnorm_; }

  std::vector<NamedTensor>& parameters() { return parameters_; }
  const std::vector<NamedTensor>& parameters() const { return parameters_; }
  // Parameters plus running statistics; handles share storage with the
  // model, so writing through them (checkpoint load) updates the model.
  std::vector<NamedTensor> named_state() const;

 private:
  struct Layer {
    Tensor weight, bias;  // linear / conv
    BatchNormState bn;    // batchnorm
  };

  std::vector<LayerSpec> specs_;
  std::vector<Layer> layers_;
  std::vector<NamedTensor> parameters_;
  std::size_t feature_boundary_;
  Shape input_shape_;
  std::size_t output_dim_ = 0;
  Mode mode_ = Mode::train;
  bool has_batchnorm_ = false;
};

// Builds a model from a compact stack description:
//   "mlp:h1,h2,..."  flatten + [linear -> (bn) -> relu] per hidden size
//   "conv:c1,c2,..." [3x3 stride-2 conv -> (bn) -> relu] per channel count,
//                    then flatten
// followed in both cases by the fixed classifier head
// linear(d->k) -> batchnorm -> relu (relu omitted when head_relu is false).
Model build_model(const std::string& stack, const Shape& sample_shape,
                  std::size_t k, bool head_relu, bool feature_batchnorm,
                  std::uint64_t seed);

}  // namespace recal
