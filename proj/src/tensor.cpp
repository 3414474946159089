#include "recal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace recal {

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

namespace detail {

std::vector<double>& ensure_grad(TensorData& t) {
  if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
  return t.grad;
}

}  // namespace detail

namespace {

void check_positive_extents(const Shape& shape) {
  for (std::size_t extent : shape) {
    if (extent == 0) {
      throw ShapeError("tensor shape " + shape_str(shape) +
                       " has a zero extent");
    }
  }
}

// Every public op promises finite outputs on finite inputs.
void ensure_finite(const char* tag, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DomainError(std::string(tag) + ": non-finite result at flat index " +
                        std::to_string(i));
    }
  }
}

thread_local ComputationRecord default_record;
thread_local ComputationRecord* active_record = nullptr;
thread_local int no_grad_depth = 0;

const char* unary_tag(UnaryKind kind) {
  switch (kind) {
    case UnaryKind::neg: return "neg";
    case UnaryKind::exp: return "exp";
    case UnaryKind::log: return "log";
    case UnaryKind::relu: return "relu";
  }
  return "?";
}

const char* binary_tag(BinaryKind kind) {
  switch (kind) {
    case BinaryKind::add: return "add";
    case BinaryKind::sub: return "sub";
    case BinaryKind::mul: return "mul";
    case BinaryKind::div: return "div";
  }
  return "?";
}

const char* reduce_tag(ReduceKind kind) {
  switch (kind) {
    case ReduceKind::sum: return "sum";
    case ReduceKind::mean: return "mean";
    case ReduceKind::max: return "max";
  }
  return "?";
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_positive_extents(shape);
  auto impl = std::make_shared<detail::TensorData>();
  impl->values.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full(Shape{}, value, requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  check_positive_extents(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " expects " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorData>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

detail::TensorData& Tensor::data() const {
  if (!impl_) throw ContractError("operation on an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return data().shape; }

std::size_t Tensor::numel() const { return data().values.size(); }

double Tensor::value() const {
  if (numel() != 1) {
    throw ContractError("value() requires a scalar tensor, got shape " +
                        shape_str(shape()));
  }
  return data().values[0];
}

double Tensor::at(std::size_t flat_index) const {
  return data().values.at(flat_index);
}

const std::vector<double>& Tensor::values() const { return data().values; }

std::vector<double>& Tensor::mutable_values() { return data().values; }

bool Tensor::requires_grad() const { return data().requires_grad; }

void Tensor::set_requires_grad(bool flag) { data().requires_grad = flag; }

bool Tensor::has_grad() const { return !data().grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) {
    throw StateError("tensor has no gradient (backward not run, or not on "
                     "the loss path)");
  }
  return data().grad;
}

void Tensor::zero_grad() { data().grad.clear(); }

Tensor Tensor::clone() const {
  const auto& d = data();
  return from_values(d.shape, d.values, d.requires_grad);
}

Tensor Tensor::detach() const {
  const auto& d = data();
  return from_values(d.shape, d.values, false);
}

// ---------------------------------------------------------------------------
// ComputationRecord

ComputationRecord::~ComputationRecord() {
  if (active_record == this) active_record = nullptr;
}

void ComputationRecord::clear() {
  nodes_.clear();
  ++generation_;
}

ComputationRecord& ComputationRecord::active() {
  return active_record ? *active_record : default_record;
}

std::int64_t ComputationRecord::append(const char* tag,
                                       std::shared_ptr<detail::TensorData> output,
                                       std::function<void()> backward) {
  nodes_.push_back(Node{tag, std::move(output), std::move(backward)});
  return static_cast<std::int64_t>(nodes_.size()) - 1;
}

void ComputationRecord::run_backward(std::int64_t from_node) {
  for (std::int64_t i = from_node; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (!node.output->grad.empty()) node.backward();
  }
}

RecordScope::RecordScope(ComputationRecord& record) : previous_(active_record) {
  active_record = &record;
}

RecordScope::~RecordScope() { active_record = previous_; }

NoGradScope::NoGradScope() { ++no_grad_depth; }

NoGradScope::~NoGradScope() { --no_grad_depth; }

bool recording_enabled() { return no_grad_depth == 0; }

Tensor record_op(const char* tag, Tensor out, const std::vector<Tensor>& inputs,
                 std::function<void()> backward) {
  if (!recording_enabled()) return out;
  bool any_grad = false;
  for (const auto& input : inputs) {
    if (input.defined() && input.requires_grad()) {
      any_grad = true;
      break;
    }
  }
  if (!any_grad) return out;
  ComputationRecord& record = ComputationRecord::active();
  auto impl = out.impl();
  impl->requires_grad = true;
  impl->record = &record;
  impl->generation = record.generation();
  impl->node = record.append(tag, impl, std::move(backward));
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError(
        "backward requires a scalar loss" +
        (loss.defined() ? ", got shape " + shape_str(loss.shape()) : std::string()));
  }
  auto impl = loss.impl();
  if (impl->record == nullptr || impl->node < 0) {
    throw ContractError("backward: loss does not belong to a computation "
                        "record (forward pass not recorded)");
  }
  ComputationRecord& record = *impl->record;
  if (impl->generation != record.generation()) {
    throw StateError("backward: computation record was already cleared; "
                     "rebuild the forward pass");
  }
  auto& seed = detail::ensure_grad(*impl);
  seed[0] = 1.0;
  record.run_backward(impl->node);
  record.clear();
}

// ---------------------------------------------------------------------------
// Elementwise unary

Tensor elementwise_unary(const Tensor& t, UnaryKind kind) {
  const char* tag = unary_tag(kind);
  const auto& x = t.values();
  std::vector<double> out(x.size());
  switch (kind) {
    case UnaryKind::neg:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i];
      break;
    case UnaryKind::exp:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i]);
      break;
    case UnaryKind::log:
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] <= 0.0) {
          throw DomainError("log: non-positive value " + std::to_string(x[i]) +
                            " at flat index " + std::to_string(i));
        }
        out[i] = std::log(x[i]);
      }
      break;
    case UnaryKind::relu:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
  }
  ensure_finite(tag, out);
  Tensor result = Tensor::from_values(t.shape(), std::move(out));
  auto ti = t.impl();
  auto oi = result.impl();
  return record_op(tag, result, {t}, [ti, oi, kind]() {
    if (!ti->requires_grad) return;
    const auto& g = oi->grad;
    auto& dx = detail::ensure_grad(*ti);
    switch (kind) {
      case UnaryKind::neg:
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] -= g[i];
        break;
      case UnaryKind::exp:
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * oi->values[i];
        break;
      case UnaryKind::log:
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / ti->values[i];
        break;
      case UnaryKind::relu:
        // Subgradient at 0 fixed to 0.
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (ti->values[i] > 0.0) dx[i] += g[i];
        }
        break;
    }
  });
}

Tensor log_clamped(const Tensor& t, double eps) {
  const auto& x = t.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::log(x[i] > eps ? x[i] : eps);
  }
  ensure_finite("log_clamped", out);
  Tensor result = Tensor::from_values(t.shape(), std::move(out));
  auto ti = t.impl();
  auto oi = result.impl();
  return record_op("log_clamped", result, {t}, [ti, oi, eps]() {
    if (!ti->requires_grad) return;
    const auto& g = oi->grad;
    auto& dx = detail::ensure_grad(*ti);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double clamped = ti->values[i] > eps ? ti->values[i] : eps;
      dx[i] += g[i] / clamped;
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary with scalar / leading-axis row-vector broadcast

namespace {

enum class Broadcast { same, a_scalar, b_scalar, a_row, b_row };

// A "row" operand matches the other operand's shape with the leading axis
// dropped (or set to 1) and is repeated along that axis.
bool is_row_of(const Shape& row, const Shape& full) {
  if (full.size() < 2) return false;
  if (row.size() + 1 == full.size()) {
    return std::equal(row.begin(), row.end(), full.begin() + 1);
  }
  if (row.size() == full.size() && row[0] == 1) {
    return std::equal(row.begin() + 1, row.end(), full.begin() + 1);
  }
  return false;
}

Broadcast classify(const char* tag, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::same;
  if (shape_numel(b) == 1) return Broadcast::b_scalar;
  if (shape_numel(a) == 1) return Broadcast::a_scalar;
  if (is_row_of(b, a)) return Broadcast::b_row;
  if (is_row_of(a, b)) return Broadcast::a_row;
  throw ShapeError(std::string(tag) + ": incompatible shapes " + shape_str(a) +
                   " vs " + shape_str(b));
}

}  // namespace

Tensor elementwise_binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const char* tag = binary_tag(kind);
  const Broadcast bc = classify(tag, a.shape(), b.shape());
  // Iterate over the larger operand; map the other through a modulus
  // (scalar -> 0, row vector -> flat index % row length).
  const bool a_is_full = (bc == Broadcast::same || bc == Broadcast::b_scalar ||
                          bc == Broadcast::b_row);
  const Tensor& full = a_is_full ? a : b;
  const Tensor& small = a_is_full ? b : a;
  const std::size_t n = full.numel();
  const std::size_t small_n = small.numel();
  const auto& xa = a.values();
  const auto& xb = b.values();

  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ia = a_is_full ? i : i % small_n;
    const std::size_t ib = a_is_full ? i % small_n : i;
    const double av = xa[bc == Broadcast::same ? i : ia];
    const double bv = xb[bc == Broadcast::same ? i : ib];
    switch (kind) {
      case BinaryKind::add: out[i] = av + bv; break;
      case BinaryKind::sub: out[i] = av - bv; break;
      case BinaryKind::mul: out[i] = av * bv; break;
      case BinaryKind::div:
        if (bv == 0.0) {
          throw DomainError("div: division by zero at flat index " +
                            std::to_string(i));
        }
        out[i] = av / bv;
        break;
    }
  }
  ensure_finite(tag, out);
  Tensor result = Tensor::from_values(full.shape(), std::move(out));
  auto ai = a.impl();
  auto bi = b.impl();
  auto oi = result.impl();
  return record_op(tag, result, {a, b}, [ai, bi, oi, kind, bc, a_is_full]() {
    const auto& g = oi->grad;
    const std::size_t n = g.size();
    const std::size_t small_n = a_is_full ? bi->values.size() : ai->values.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t ia = bc == Broadcast::same ? i : (a_is_full ? i : i % small_n);
      const std::size_t ib = bc == Broadcast::same ? i : (a_is_full ? i % small_n : i);
      const double av = ai->values[ia];
      const double bv = bi->values[ib];
      double da = 0.0;
      double db = 0.0;
      switch (kind) {
        case BinaryKind::add: da = g[i]; db = g[i]; break;
        case BinaryKind::sub: da = g[i]; db = -g[i]; break;
        case BinaryKind::mul: da = g[i] * bv; db = g[i] * av; break;
        case BinaryKind::div:
          da = g[i] / bv;
          db = -g[i] * av / (bv * bv);
          break;
      }
      if (ai->requires_grad) detail::ensure_grad(*ai)[ia] += da;
      if (bi->requires_grad) detail::ensure_grad(*bi)[ib] += db;
    }
  });
}

// ---------------------------------------------------------------------------
// Matrix product

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  const std::size_t d = a.shape()[1];
  const std::size_t k = b.shape()[1];
  const auto& xa = a.values();
  const auto& xb = b.values();
  std::vector<double> out(m * k, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < d; ++l) {
      const double av = xa[i * d + l];
      for (std::size_t j = 0; j < k; ++j) {
        out[i * k + j] += av * xb[l * k + j];
      }
    }
  }
  ensure_finite("matmul", out);
  Tensor result = Tensor::from_values({m, k}, std::move(out));
  auto ai = a.impl();
  auto bi = b.impl();
  auto oi = result.impl();
  return record_op("matmul", result, {a, b}, [ai, bi, oi, m, d, k]() {
    const auto& g = oi->grad;
    if (ai->requires_grad) {
      auto& da = detail::ensure_grad(*ai);  // dA = g . B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < d; ++l) {
          double acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) {
            acc += g[i * k + j] * bi->values[l * k + j];
          }
          da[i * d + l] += acc;
        }
      }
    }
    if (bi->requires_grad) {
      auto& db = detail::ensure_grad(*bi);  // dB = A^T . g
      for (std::size_t l = 0; l < d; ++l) {
        for (std::size_t j = 0; j < k; ++j) {
          double acc = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            acc += ai->values[i * d + l] * g[i * k + j];
          }
          db[l * k + j] += acc;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

struct AxisLayout {
  std::size_t outer, extent, inner;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
  AxisLayout layout{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) layout.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) layout.inner *= shape[i];
  return layout;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

}  // namespace

Tensor reduce(const Tensor& t, ReduceKind kind, std::optional<std::size_t> axis) {
  const char* tag = reduce_tag(kind);
  const auto& x = t.values();
  const std::size_t n = x.size();

  if (!axis.has_value()) {
    double acc;
    std::size_t arg = 0;
    if (kind == ReduceKind::max) {
      acc = x[0];
      for (std::size_t i = 1; i < n; ++i) {
        if (x[i] > acc) {  // strict: ties keep the first maximal element
          acc = x[i];
          arg = i;
        }
      }
    } else {
      acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += x[i];
      if (kind == ReduceKind::mean) acc /= static_cast<double>(n);
    }
    ensure_finite(tag, {acc});
    Tensor result = Tensor::from_values(Shape{}, {acc});
    auto ti = t.impl();
    auto oi = result.impl();
    return record_op(tag, result, {t}, [ti, oi, kind, n, arg]() {
      if (!ti->requires_grad) return;
      const double g = oi->grad[0];
      auto& dx = detail::ensure_grad(*ti);
      switch (kind) {
        case ReduceKind::sum:
          for (std::size_t i = 0; i < n; ++i) dx[i] += g;
          break;
        case ReduceKind::mean:
          for (std::size_t i = 0; i < n; ++i) dx[i] += g / static_cast<double>(n);
          break;
        case ReduceKind::max:
          dx[arg] += g;
          break;
      }
    });
  }

  const std::size_t ax = *axis;
  if (ax >= t.ndim()) {
    throw ShapeError(std::string(tag) + ": axis " + std::to_string(ax) +
                     " out of range for shape " + shape_str(t.shape()));
  }
  const AxisLayout layout = axis_layout(t.shape(), ax);
  Shape out_shape = drop_axis(t.shape(), ax);
  const std::size_t out_n = layout.outer * layout.inner;
  std::vector<double> out(out_n);
  std::vector<std::size_t> argmax(kind == ReduceKind::max ? out_n : 0, 0);
  for (std::size_t o = 0; o < layout.outer; ++o) {
    for (std::size_t in = 0; in < layout.inner; ++in) {
      const std::size_t base = o * layout.extent * layout.inner + in;
      if (kind == ReduceKind::max) {
        double best = x[base];
        std::size_t best_k = 0;
        for (std::size_t kk = 1; kk < layout.extent; ++kk) {
          const double v = x[base + kk * layout.inner];
          if (v > best) {
            best = v;
            best_k = kk;
          }
        }
        out[o * layout.inner + in] = best;
        argmax[o * layout.inner + in] = best_k;
      } else {
        double acc = 0.0;
        for (std::size_t kk = 0; kk < layout.extent; ++kk) {
          acc += x[base + kk * layout.inner];
        }
        if (kind == ReduceKind::mean) acc /= static_cast<double>(layout.extent);
        out[o * layout.inner + in] = acc;
      }
    }
  }
  ensure_finite(tag, out);
  Tensor result = Tensor::from_values(std::move(out_shape), std::move(out));
  auto ti = t.impl();
  auto oi = result.impl();
  return record_op(tag, result, {t},
                   [ti, oi, kind, layout, argmax = std::move(argmax)]() {
    if (!ti->requires_grad) return;
    const auto& g = oi->grad;
    auto& dx = detail::ensure_grad(*ti);
    for (std::size_t o = 0; o < layout.outer; ++o) {
      for (std::size_t in = 0; in < layout.inner; ++in) {
        const std::size_t base = o * layout.extent * layout.inner + in;
        const double gv = g[o * layout.inner + in];
        switch (kind) {
          case ReduceKind::sum:
            for (std::size_t kk = 0; kk < layout.extent; ++kk) {
              dx[base + kk * layout.inner] += gv;
            }
            break;
          case ReduceKind::mean:
            for (std::size_t kk = 0; kk < layout.extent; ++kk) {
              dx[base + kk * layout.inner] +=
                  gv / static_cast<double>(layout.extent);
            }
            break;
          case ReduceKind::max:
            dx[base + argmax[o * layout.inner + in] * layout.inner] += gv;
            break;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reshape

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(t.shape()) + " as " +
                     shape_str(shape));
  }
  Tensor result = Tensor::from_values(std::move(shape), t.values());
  auto ti = t.impl();
  auto oi = result.impl();
  return record_op("reshape", result, {t}, [ti, oi]() {
    if (!ti->requires_grad) return;
    const auto& g = oi->grad;
    auto& dx = detail::ensure_grad(*ti);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Named conveniences

Tensor neg(const Tensor& t) { return elementwise_unary(t, UnaryKind::neg); }
Tensor exp(const Tensor& t) { return elementwise_unary(t, UnaryKind::exp); }
Tensor log(const Tensor& t) { return elementwise_unary(t, UnaryKind::log); }
Tensor relu(const Tensor& t) { return elementwise_unary(t, UnaryKind::relu); }

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, BinaryKind::add);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, BinaryKind::sub);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, BinaryKind::mul);
}
Tensor div(const Tensor& a, const Tensor& b) {
  return elementwise_binary(a, b, BinaryKind::div);
}

Tensor sum(const Tensor& t) { return reduce(t, ReduceKind::sum); }
Tensor sum(const Tensor& t, std::size_t axis) {
  return reduce(t, ReduceKind::sum, axis);
}
Tensor mean(const Tensor& t) { return reduce(t, ReduceKind::mean); }
Tensor mean(const Tensor& t, std::size_t axis) {
  return reduce(t, ReduceKind::mean, axis);
}
Tensor max(const Tensor& t) { return reduce(t, ReduceKind::max); }
Tensor max(const Tensor& t, std::size_t axis) {
  return reduce(t, ReduceKind::max, axis);
}

}  // namespace recal
