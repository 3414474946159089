#include "recal/nn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace recal {

namespace {

// Calls fn(flat_index) for every element belonging to feature `f`.
// Rank-2 input: feature axis 1; rank-4: channel axis 1 (stats over M,H,W).
template <typename Fn>
void for_each_in_feature(const Shape& shape, std::size_t f, Fn&& fn) {
  if (shape.size() == 2) {
    const std::size_t m = shape[0], features = shape[1];
    for (std::size_t i = 0; i < m; ++i) fn(i * features + f);
  } else {
    const std::size_t m = shape[0], c = shape[1], plane = shape[2] * shape[3];
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t base = (i * c + f) * plane;
      for (std::size_t p = 0; p < plane; ++p) fn(base + p);
    }
  }
}

std::size_t feature_count(const Shape& shape) {
  return shape[1];
}

std::size_t per_feature_n(const Shape& shape) {
  return shape.size() == 2 ? shape[0] : shape[0] * shape[2] * shape[3];
}

}  // namespace

// ---------------------------------------------------------------------------
// ProbMatrix

ProbMatrix ProbMatrix::from_tensor(Tensor values) {
  if (!values.defined() || values.ndim() != 2) {
    throw ShapeError("ProbMatrix expects an MxK tensor" +
                     (values.defined() ? ", got " + shape_str(values.shape())
                                       : std::string()));
  }
  const std::size_t m = values.shape()[0];
  const std::size_t k = values.shape()[1];
  const auto& x = values.values();
  for (std::size_t i = 0; i < m; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = x[i * k + j];
      if (p < -1e-12 || p > 1.0 + 1e-12) {
        throw DomainError("ProbMatrix entry out of [0,1] at row " +
                          std::to_string(i) + " col " + std::to_string(j));
      }
      row_sum += p;
    }
    if (std::fabs(row_sum - 1.0) > 1e-9) {
      throw DomainError("ProbMatrix row " + std::to_string(i) +
                        " sums to " + std::to_string(row_sum));
    }
  }
  return ProbMatrix(std::move(values));
}

// ---------------------------------------------------------------------------
// Initialization

Tensor xavier_init(const Shape& shape, Rng& rng) {
  if (shape.size() < 2) {
    throw ContractError("xavier_init needs a shape with >= 2 dimensions, got " +
                        shape_str(shape));
  }
  std::size_t receptive = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) receptive *= shape[i];
  // 2-D weights are stored [in, out]; higher ranks follow the conv layout
  // [out_ch, in_ch, k, k].
  const std::size_t fan_in = shape.size() == 2 ? shape[0] : shape[1] * receptive;
  const std::size_t fan_out = shape.size() == 2 ? shape[1] : shape[0] * receptive;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return Tensor::from_values(shape, std::move(values), true);
}

// ---------------------------------------------------------------------------
// Linear

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Conv2d

Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      const Tensor& bias, std::size_t stride, std::size_t pad) {
  if (input.ndim() != 4 || weight.ndim() != 4) {
    throw ShapeError("conv2d expects input [MxCxHxW] and weight [C'xCxkxk], "
                     "got " + shape_str(input.shape()) + " and " +
                     shape_str(weight.shape()));
  }
  const std::size_t m = input.shape()[0];
  const std::size_t c_in = input.shape()[1];
  const std::size_t h = input.shape()[2];
  const std::size_t w = input.shape()[3];
  const std::size_t c_out = weight.shape()[0];
  const std::size_t kh = weight.shape()[2];
  const std::size_t kw = weight.shape()[3];
  if (weight.shape()[1] != c_in) {
    throw ShapeError("conv2d channel mismatch: input " +
                     shape_str(input.shape()) + " vs weight " +
                     shape_str(weight.shape()));
  }
  if (kh > h + 2 * pad || kw > w + 2 * pad) {
    throw ShapeError("conv2d kernel " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " larger than padded input " +
                     std::to_string(h + 2 * pad) + "x" +
                     std::to_string(w + 2 * pad));
  }
  if (stride == 0) throw ContractError("conv2d stride must be >= 1");
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;

  const auto& x = input.values();
  const auto& wt = weight.values();
  const auto& b = bias.values();
  std::vector<double> out(m * c_out * oh * ow);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t co = 0; co < c_out; ++co) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xo = 0; xo < ow; ++xo) {
          double acc = b[co];
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(y * stride + ky) -
                  static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(xo * stride + kx) -
                    static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += x[((i * c_in + ci) * h + iy) * w + ix] *
                       wt[((co * c_in + ci) * kh + ky) * kw + kx];
              }
            }
          }
          out[((i * c_out + co) * oh + y) * ow + xo] = acc;
        }
      }
    }
  }
  Tensor result = Tensor::from_values({m, c_out, oh, ow}, std::move(out));
  auto xi = input.impl();
  auto wi = weight.impl();
  auto bi = bias.impl();
  auto oi = result.impl();
  return record_op(
      "conv2d", result, {input, weight, bias},
      [xi, wi, bi, oi, m, c_in, h, w, c_out, kh, kw, oh, ow, stride, pad]() {
        const auto& g = oi->grad;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t co = 0; co < c_out; ++co) {
            for (std::size_t y = 0; y < oh; ++y) {
              for (std::size_t xo = 0; xo < ow; ++xo) {
                const double gv = g[((i * c_out + co) * oh + y) * ow + xo];
                if (gv == 0.0) continue;
                if (bi->requires_grad) detail::ensure_grad(*bi)[co] += gv;
                for (std::size_t ci = 0; ci < c_in; ++ci) {
                  for (std::size_t ky = 0; ky < kh; ++ky) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(y * stride + ky) -
                        static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                      const std::ptrdiff_t ix =
                          static_cast<std::ptrdiff_t>(xo * stride + kx) -
                          static_cast<std::ptrdiff_t>(pad);
                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                      const std::size_t xidx = ((i * c_in + ci) * h + iy) * w + ix;
                      const std::size_t widx = ((co * c_in + ci) * kh + ky) * kw + kx;
                      if (wi->requires_grad) {
                        detail::ensure_grad(*wi)[widx] += gv * xi->values[xidx];
                      }
                      if (xi->requires_grad) {
                        detail::ensure_grad(*xi)[xidx] += gv * wi->values[widx];
                      }
                    }
                  }
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// BatchNorm

Tensor batchnorm_forward(const Tensor& input, BatchNormState& state, Mode mode) {
  if (input.ndim() != 2 && input.ndim() != 4) {
    throw ShapeError("batchnorm expects rank-2 or rank-4 input, got " +
                     shape_str(input.shape()));
  }
  const Shape shape = input.shape();
  const std::size_t features = feature_count(shape);
  if (features != state.gamma.numel()) {
    throw ShapeError("batchnorm feature mismatch: input has " +
                     std::to_string(features) + ", state has " +
                     std::to_string(state.gamma.numel()));
  }
  const std::size_t n = per_feature_n(shape);
  if (mode == Mode::train && shape[0] < 2) {
    throw ContractError("batchnorm in train mode needs batch size >= 2 "
                        "(variance undefined)");
  }

  const auto& x = input.values();
  std::vector<double> mean_f(features, 0.0), sigma_f(features, 0.0);
  if (mode == Mode::train) {
    auto& rm = state.running_mean.mutable_values();
    auto& rv = state.running_var.mutable_values();
    for (std::size_t f = 0; f < features; ++f) {
      double sum = 0.0;
      for_each_in_feature(shape, f, [&](std::size_t i) { sum += x[i]; });
      const double mu = sum / static_cast<double>(n);
      double sq = 0.0;
      for_each_in_feature(shape, f, [&](std::size_t i) {
        const double d = x[i] - mu;
        sq += d * d;
      });
      const double var = sq / static_cast<double>(n);  // biased
      mean_f[f] = mu;
      sigma_f[f] = std::sqrt(var + state.eps);
      rm[f] = (1.0 - state.momentum) * rm[f] + state.momentum * mu;
      rv[f] = (1.0 - state.momentum) * rv[f] + state.momentum * var;
    }
  } else {
    const auto& rm = state.running_mean.values();
    const auto& rv = state.running_var.values();
    for (std::size_t f = 0; f < features; ++f) {
      mean_f[f] = rm[f];
      sigma_f[f] = std::sqrt(rv[f] + state.eps);
    }
  }

  const auto& gamma = state.gamma.values();
  const auto& beta = state.beta.values();
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  for (std::size_t f = 0; f < features; ++f) {
    for_each_in_feature(shape, f, [&](std::size_t i) {
      xhat[i] = (x[i] - mean_f[f]) / sigma_f[f];
      out[i] = gamma[f] * xhat[i] + beta[f];
    });
  }
  Tensor result = Tensor::from_values(shape, std::move(out));
  auto xi = input.impl();
  auto gi = state.gamma.impl();
  auto bi = state.beta.impl();
  auto oi = result.impl();
  const bool train = mode == Mode::train;
  return record_op(
      "batchnorm", result, {input, state.gamma, state.beta},
      [xi, gi, bi, oi, shape, features, n, train, xhat = std::move(xhat),
       sigma_f = std::move(sigma_f)]() {
        const auto& g = oi->grad;
        for (std::size_t f = 0; f < features; ++f) {
          double g_sum = 0.0, gx_sum = 0.0;
          for_each_in_feature(shape, f, [&](std::size_t i) {
            g_sum += g[i];
            gx_sum += g[i] * xhat[i];
          });
          if (gi->requires_grad) detail::ensure_grad(*gi)[f] += gx_sum;
          if (bi->requires_grad) detail::ensure_grad(*bi)[f] += g_sum;
          if (!xi->requires_grad) continue;
          auto& dx = detail::ensure_grad(*xi);
          const double gamma_f = gi->values[f];
          const double inv_sigma = 1.0 / sigma_f[f];
          if (train) {
            const double g_mean = g_sum / static_cast<double>(n);
            const double gx_mean = gx_sum / static_cast<double>(n);
            for_each_in_feature(shape, f, [&](std::size_t i) {
              dx[i] += gamma_f * inv_sigma * (g[i] - g_mean - xhat[i] * gx_mean);
            });
          } else {
            for_each_in_feature(shape, f, [&](std::size_t i) {
              dx[i] += gamma_f * inv_sigma * g[i];
            });
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax

ProbMatrix softmax_rows(const Tensor& logits) {
  if (logits.ndim() != 2) {
    throw ShapeError("softmax_rows expects an MxK tensor, got " +
                     shape_str(logits.shape()));
  }
  const std::size_t m = logits.shape()[0];
  const std::size_t k = logits.shape()[1];
  const auto& r = logits.values();
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (!std::isfinite(r[i])) {
      throw DomainError("softmax_rows: non-finite logit at flat index " +
                        std::to_string(i));
    }
  }
  std::vector<double> out(m * k);
  for (std::size_t i = 0; i < m; ++i) {
    double row_max = r[i * k];
    for (std::size_t j = 1; j < k; ++j) row_max = std::max(row_max, r[i * k + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = std::exp(r[i * k + j] - row_max);
      denom += out[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= denom;
  }
  Tensor result = Tensor::from_values({m, k}, std::move(out));
  auto ri = logits.impl();
  auto oi = result.impl();
  result = record_op("softmax_rows", result, {logits}, [ri, oi, m, k]() {
    if (!ri->requires_grad) return;
    const auto& g = oi->grad;
    const auto& p = oi->values;
    auto& dr = detail::ensure_grad(*ri);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += g[i * k + j] * p[i * k + j];
      for (std::size_t j = 0; j < k; ++j) {
        dr[i * k + j] += p[i * k + j] * (g[i * k + j] - dot);
      }
    }
  });
  return ProbMatrix::from_tensor(std::move(result));
}

// ---------------------------------------------------------------------------
// Model

namespace {

struct ShapeWalker {
  Shape current;  // per-sample shape, batch axis excluded

  void apply(const LayerSpec& spec, std::size_t index) {
    std::visit(
        [&](const auto& s) { step(s, index); },
        spec);
  }

  [[noreturn]] void fail(std::size_t index, const std::string& what) {
    throw ShapeError("model layer " + std::to_string(index) + ": " + what +
                     " (incoming sample shape " + shape_str(current) + ")");
  }

  void step(const LinearSpec& s, std::size_t index) {
    if (current.size() != 1 || current[0] != s.in) {
      fail(index, "linear(" + std::to_string(s.in) + "->" +
                      std::to_string(s.out) + ") input mismatch");
    }
    current = {s.out};
  }
  void step(const Conv2dSpec& s, std::size_t index) {
    if (current.size() != 3 || current[0] != s.in_ch) {
      fail(index, "conv2d expects [C,H,W] input with C=" +
                      std::to_string(s.in_ch));
    }
    const std::size_t h = current[1], w = current[2];
    if (s.kernel > h + 2 * s.pad || s.kernel > w + 2 * s.pad) {
      fail(index, "kernel larger than padded input");
    }
    current = {s.out_ch, (h + 2 * s.pad - s.kernel) / s.stride + 1,
               (w + 2 * s.pad - s.kernel) / s.stride + 1};
  }
  void step(const BatchNormSpec& s, std::size_t index) {
    if (current.empty() || current[0] != s.features) {
      fail(index, "batchnorm(" + std::to_string(s.features) +
                      ") feature mismatch");
    }
  }
  void step(const ReluSpec&, std::size_t) {}
  void step(const FlattenSpec&, std::size_t) {
    current = {shape_numel(current)};
  }
};

}  // namespace

Model::Model(std::vector<LayerSpec> specs, std::size_t feature_boundary,
             Shape input_shape, std::uint64_t seed)
    : specs_(std::move(specs)),
      feature_boundary_(feature_boundary),
      input_shape_(std::move(input_shape)) {
  if (feature_boundary_ > specs_.size()) {
    throw ContractError("feature boundary " + std::to_string(feature_boundary_) +
                        " beyond layer count " + std::to_string(specs_.size()));
  }
  ShapeWalker walker{input_shape_};
  Rng rng(seed);
  layers_.resize(specs_.size());
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    if (const auto* lin = std::get_if<LinearSpec>(&specs_[i])) {
      layers_[i].weight = xavier_init({lin->in, lin->out}, rng);
      layers_[i].bias = Tensor::zeros({lin->out}, true);
      parameters_.push_back({prefix + "weight", layers_[i].weight});
      parameters_.push_back({prefix + "bias", layers_[i].bias});
    } else if (const auto* conv = std::get_if<Conv2dSpec>(&specs_[i])) {
      layers_[i].weight = xavier_init(
          {conv->out_ch, conv->in_ch, conv->kernel, conv->kernel}, rng);
      layers_[i].bias = Tensor::zeros({conv->out_ch}, true);
      parameters_.push_back({prefix + "weight", layers_[i].weight});
      parameters_.push_back({prefix + "bias", layers_[i].bias});
    } else if (const auto* bn = std::get_if<BatchNormSpec>(&specs_[i])) {
      auto& state = layers_[i].bn;
      state.gamma = Tensor::full({bn->features}, 1.0, true);
      state.beta = Tensor::zeros({bn->features}, true);
      state.running_mean = Tensor::zeros({bn->features});
      state.running_var = Tensor::full({bn->features}, 1.0);
      parameters_.push_back({prefix + "gamma", state.gamma});
      parameters_.push_back({prefix + "beta", state.beta});
      has_batchnorm_ = true;
    }
    walker.apply(specs_[i], i);
  }
  if (walker.current.size() != 1) {
    throw ShapeError("model must end with a flat K-dim output, got " +
                     shape_str(walker.current));
  }
  output_dim_ = walker.current[0];
}

Tensor Model::forward(const Tensor& batch, Tensor* embedding) {
  if (!batch.defined() || batch.ndim() != input_shape_.size() + 1) {
    throw ShapeError("model forward expects batched input of sample shape " +
                     shape_str(input_shape_));
  }
  for (std::size_t i = 0; i < input_shape_.size(); ++i) {
    if (batch.shape()[i + 1] != input_shape_[i]) {
      throw ShapeError("model forward: batch shape " + shape_str(batch.shape()) +
                       " does not match sample shape " + shape_str(input_shape_));
    }
  }
  const std::size_t m = batch.shape()[0];
  if (mode_ == Mode::train && has_batchnorm_ && m < 2) {
    throw ContractError("train-mode forward with batch-norm needs batch size "
                        ">= 2 (variance undefined)");
  }

  Tensor x = batch;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (i == feature_boundary_ && embedding) *embedding = x;
    Layer& layer = layers_[i];
    if (std::holds_alternative<LinearSpec>(specs_[i])) {
      x = linear_forward(x, layer.weight, layer.bias);
    } else if (const auto* conv = std::get_if<Conv2dSpec>(&specs_[i])) {
      x = conv2d_forward(x, layer.weight, layer.bias, conv->stride, conv->pad);
    } else if (std::holds_alternative<BatchNormSpec>(specs_[i])) {
      x = batchnorm_forward(x, layer.bn, mode_);
    } else if (std::holds_alternative<ReluSpec>(specs_[i])) {
      x = relu(x);
    } else {
      x = reshape(x, {m, shape_numel(x.shape()) / m});
    }
  }
  if (feature_boundary_ == specs_.size() && embedding) *embedding = x;
  return x;
}

std::vector<NamedTensor> Model::named_state() const {
  std::vector<NamedTensor> state = parameters_;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (std::holds_alternative<BatchNormSpec>(specs_[i])) {
      const std::string prefix = "layer" + std::to_string(i) + ".";
      state.push_back({prefix + "running_mean", layers_[i].bn.running_mean});
      state.push_back({prefix + "running_var", layers_[i].bn.running_var});
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// Stack builder

namespace {

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> sizes;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      throw ConfigError("bad size '" + item + "' in model stack");
    }
    if (pos != item.size() || v == 0) {
      throw ConfigError("bad size '" + item + "' in model stack");
    }
    sizes.push_back(v);
  }
  return sizes;
}

}  // namespace

Model build_model(const std::string& stack, const Shape& sample_shape,
                  std::size_t k, bool head_relu, bool feature_batchnorm,
                  std::uint64_t seed) {
  if (k == 0) throw ConfigError("cluster count k must be positive");
  const auto colon = stack.find(':');
  const std::string kind = stack.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : stack.substr(colon + 1);
  const auto sizes = parse_size_list(args);

  std::vector<LayerSpec> specs;
  std::size_t d = 0;
  if (kind == "mlp") {
    if (sample_shape.size() != 1) specs.push_back(FlattenSpec{});
    d = shape_numel(sample_shape);
    for (std::size_t h : sizes) {
      specs.push_back(LinearSpec{d, h});
      if (feature_batchnorm) specs.push_back(BatchNormSpec{h});
      specs.push_back(ReluSpec{});
      d = h;
    }
  } else if (kind == "conv") {
    if (sample_shape.size() != 3) {
      throw ConfigError("conv stack needs [C,H,W] samples, got " +
                        shape_str(sample_shape));
    }
    std::size_t c = sample_shape[0], h = sample_shape[1], w = sample_shape[2];
    for (std::size_t ch : sizes) {
      specs.push_back(Conv2dSpec{c, ch, 3, 2, 1});
      if (feature_batchnorm) specs.push_back(BatchNormSpec{ch});
      specs.push_back(ReluSpec{});
      c = ch;
      h = (h + 2 - 3) / 2 + 1;
      w = (w + 2 - 3) / 2 + 1;
    }
    specs.push_back(FlattenSpec{});
    d = c * h * w;
  } else {
    throw ConfigError("unknown model stack '" + stack +
                      "' (expected mlp:... or conv:...)");
  }

  const std::size_t boundary = specs.size();
  specs.push_back(LinearSpec{d, k});
  specs.push_back(BatchNormSpec{k});
  if (head_relu) specs.push_back(ReluSpec{});
  return Model(std::move(specs), boundary, sample_shape, seed);
}

}  // namespace recal
