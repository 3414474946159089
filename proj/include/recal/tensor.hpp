#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "recal/error.hpp"

namespace recal {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ComputationRecord;

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until backward touches this tensor
  // Recording handle: which record produced this tensor, and when.
  ComputationRecord* record = nullptr;
  std::int64_t node = -1;
  std::uint64_t generation = 0;
};

// Grad buffer of t, allocated as zeros on first touch.
std::vector<double>& ensure_grad(TensorData& t);

}  // namespace detail

// Dense row-major double tensor. Copies share storage (handle semantics);
// use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;
  bool is_scalar() const { return defined() && numel() == 1; }

  // Scalar read; contract error unless numel() == 1.
  double value() const;
  double at(std::size_t flat_index) const;
  const std::vector<double>& values() const;
  // In-place mutation (optimizer updates, loaders). Affects all handles
  // sharing this storage.
  std::vector<double>& mutable_values();

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  Tensor clone() const;
  Tensor detach() const;  // same values, no grad, no recording handle

  std::shared_ptr<detail::TensorData> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> impl)
      : impl_(std::move(impl)) {}
  detail::TensorData& data() const;

  std::shared_ptr<detail::TensorData> impl_;

  friend Tensor record_op(const char* tag, Tensor out,
                          const std::vector<Tensor>& inputs,
                          std::function<void()> backward);
};

// Append-only record of differentiable operations. Backward replays the
// node sequence in reverse; the record is cleared afterwards and its
// generation counter advances so stale handles are detected.
class ComputationRecord {
 public:
  ComputationRecord() = default;
  ComputationRecord(const ComputationRecord&) = delete;
  ComputationRecord& operator=(const ComputationRecord&) = delete;
  ~ComputationRecord();

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t generation() const { return generation_; }
  void clear();

  static ComputationRecord& active();

 private:
  struct Node {
    const char* tag;
    std::shared_ptr<detail::TensorData> output;
    std::function<void()> backward;
  };

  std::int64_t append(const char* tag,
                      std::shared_ptr<detail::TensorData> output,
                      std::function<void()> backward);
  void run_backward(std::int64_t from_node);

  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;

  friend Tensor record_op(const char* tag, Tensor out,
                          const std::vector<Tensor>& inputs,
                          std::function<void()> backward);
  friend void backward(const Tensor& loss);
};

// Routes recording to a specific record for the current thread.
class RecordScope {
 public:
  explicit RecordScope(ComputationRecord& record);
  ~RecordScope();
  RecordScope(const RecordScope&) = delete;
  RecordScope& operator=(const RecordScope&) = delete;

 private:
  ComputationRecord* previous_;
};

// Disables recording while alive (inference paths).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
};

bool recording_enabled();

// Registers `out` as the result of a differentiable op over `inputs`.
// `backward` must accumulate into the inputs' grad buffers when called.
// No-op (returns out unrecorded) when recording is off or no input
// requires gradients.
Tensor record_op(const char* tag, Tensor out, const std::vector<Tensor>& inputs,
                 std::function<void()> backward);

enum class UnaryKind { neg, exp, log, relu };
enum class BinaryKind { add, sub, mul, div };
enum class ReduceKind { sum, mean, max };

Tensor elementwise_unary(const Tensor& t, UnaryKind kind);
Tensor elementwise_binary(const Tensor& a, const Tensor& b, BinaryKind kind);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor reduce(const Tensor& t, ReduceKind kind,
              std::optional<std::size_t> axis = std::nullopt);

// Seeds grad of `loss` with 1, propagates through the loss's record in
// reverse topological order, then clears the record.
void backward(const Tensor& loss);

// Named conveniences over the kinds above.
Tensor neg(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);
Tensor relu(const Tensor& t);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& t);
Tensor sum(const Tensor& t, std::size_t axis);
Tensor mean(const Tensor& t);
Tensor mean(const Tensor& t, std::size_t axis);
Tensor max(const Tensor& t);
Tensor max(const Tensor& t, std::size_t axis);

// log(max(x, eps)); gradient 1/max(x, eps). The guarded form used inside
// entropy terms so 0 * log 0 contributes 0 with a bounded gradient.
Tensor log_clamped(const Tensor& t, double eps = 1e-12);

// Same data, new shape (copy), differentiable.
Tensor reshape(const Tensor& t, Shape shape);

}  // namespace recal
