#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rswin {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Plain value type: copying copies data.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array zeros(Shape shape) { return Array(std::move(shape), 0.0); }
  static Array ones(Shape shape) { return Array(std::move(shape), 1.0); }
  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  // Negative axes count from the end.
  std::size_t dim(int axis) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;

  // Same data, new shape; numel must match.
  Array reshaped(Shape shape) const;
  void fill(double v);
  // this += other (same shape).
  void accumulate(const Array& other);
  bool all_finite() const;

  bool operator==(const Array& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tensor;

namespace detail {

// Receives the output gradient and one slot per input; a slot is null when
// that input does not require a gradient.
using BackwardFn =
    std::function<void(const Array& grad_out, std::span<Array* const> grad_in)>;

struct Node {
  Array value;
  Array grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  const char* op = "leaf";
};

}  // namespace detail

// Handle to a node of the define-by-run computation graph. Copies share the
// node (and therefore the gradient slot), which is what parameters need.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Array value, bool requires_grad = false);

  static Tensor parameter(Array value) { return Tensor(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Array& value() const { return node_->value; }
  // In-place mutation of the stored value (optimizers, checkpoint loading).
  Array& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rank() const { return node_->value.rank(); }
  std::size_t dim(int axis) const { return node_->value.dim(axis); }
  std::size_t numel() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Zero-filled array of the value's shape when no gradient has arrived.
  Array grad() const;
  void zero_grad() { node_->grad = Array(); }
  const char* op_name() const { return node_->op; }

  // Fresh leaf with a copy of the value and no history.
  Tensor detach() const;

  // Reverse-mode sweep from a scalar. Gradients accumulate into every
  // reachable tensor that requires them.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Records an operation on the tape. When no input requires a gradient (or
// grad mode is off) the result is a plain constant and nothing is kept.
Tensor record(Array value, std::initializer_list<Tensor> inputs,
              detail::BackwardFn backward, const char* op);
Tensor record(Array value, const std::vector<Tensor>& inputs,
              detail::BackwardFn backward, const char* op);

bool grad_enabled();

// Disables recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

}  // namespace rswin
