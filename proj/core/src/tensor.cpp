#include "rswin/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "rswin/errors.hpp"

namespace rswin {

namespace {
thread_local int no_grad_depth = 0;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Array::Array(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("array data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
}

std::size_t Array::dim(int axis) const {
  const int r = static_cast<int>(shape_.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(a)];
}

double Array::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on array of shape " + shape_str(shape_));
  }
  return data_[0];
}

Array Array::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Array(std::move(shape), data_);
}

void Array::fill(double v) {
  for (auto& x : data_) x = v;
}

void Array::accumulate(const Array& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("accumulate " + shape_str(other.shape_) + " into " + shape_str(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool Array::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

Tensor::Tensor() = default;

Tensor::Tensor(Array value, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Array Tensor::grad() const {
  if (node_->grad.empty()) return Array::zeros(node_->value.shape());
  return node_->grad;
}

Tensor Tensor::detach() const { return Tensor(node_->value, false); }

void Tensor::backward() const {
  if (node_->value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     shape_str(node_->value.shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  Array seed = Array::ones(node_->value.shape());
  if (node_->grad.empty()) {
    node_->grad = std::move(seed);
  } else {
    node_->grad.accumulate(seed);
  }

  std::vector<Array*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward || n->grad.empty()) continue;
    slots.assign(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      detail::Node* in = n->inputs[i].get();
      if (!in->requires_grad) continue;
      if (in->grad.empty()) in->grad = Array::zeros(in->value.shape());
      slots[i] = &in->grad;
    }
    n->backward(n->grad, slots);
  }
}

namespace {

Tensor make_recorded(Array value, std::vector<std::shared_ptr<detail::Node>> inputs,
                     detail::BackwardFn backward, const char* op) {
  bool any = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) any = any || in->requires_grad;
  }
  Tensor out(std::move(value), any);
  if (any) {
    const auto& node = out.node();
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    node->op = op;
  }
  return out;
}

}  // namespace

Tensor record(Array value, std::initializer_list<Tensor> inputs,
              detail::BackwardFn backward, const char* op) {
  std::vector<std::shared_ptr<detail::Node>> nodes;
  nodes.reserve(inputs.size());
  for (const auto& t : inputs) nodes.push_back(t.node());
  return make_recorded(std::move(value), std::move(nodes), std::move(backward), op);
}

Tensor record(Array value, const std::vector<Tensor>& inputs,
              detail::BackwardFn backward, const char* op) {
  std::vector<std::shared_ptr<detail::Node>> nodes;
  nodes.reserve(inputs.size());
  for (const auto& t : inputs) nodes.push_back(t.node());
  return make_recorded(std::move(value), std::move(nodes), std::move(backward), op);
}

bool grad_enabled() { return no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

}  // namespace rswin
