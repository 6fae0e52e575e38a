#include "ng4d/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace ng4d {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::span<double> grad_buffer(TensorImpl& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

}  // namespace detail

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

void check_finite(std::string_view op, std::span<const double> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      std::ostringstream os;
      os << "non-finite value " << data[i] << " produced by '" << op << "' at element " << i;
      throw NumericalError(os.str());
    }
  }
}

detail::ImplPtr new_impl(Shape shape, std::vector<double> data) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) {
  const auto n = shape_numel(shape);
  impl_ = new_impl(std::move(shape), std::vector<double>(n, fill));
  check_finite("fill", impl_->data);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  impl_ = new_impl(std::move(shape), std::move(values));
  check_finite("construct", impl_->data);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

Tensor Tensor::from_impl(detail::ImplPtr impl) { return Tensor(std::move(impl)); }

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t i) const { return values()[i]; }

double Tensor::at(std::size_t i, std::size_t j) const {
  const auto& s = shape();
  return impl_->data[i * s[1] + j];
}

double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  const auto& s = shape();
  return impl_->data[(i * s[1] + j) * s[2] + k];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::is_leaf() const { return impl_ && !impl_->node; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw Error("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = flag;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw Error("tensor has no gradient");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

std::span<double> Tensor::mutable_values() {
  if (!is_leaf()) throw Error("mutable_values on a non-leaf tensor");
  return impl_->data;
}

Tensor Tensor::detach() const {
  return Tensor::from_impl(new_impl(shape(), impl_->data));
}

namespace {

template <class Range>
Tensor make_op_impl(std::string_view op, Shape shape, std::vector<double> data,
                    const Range& inputs, detail::BackwardFn backward) {
  check_finite(op, data);
  auto impl = new_impl(std::move(shape), std::move(data));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    auto node = std::make_shared<detail::Node>();
    node->op = std::string(op);
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward);
    impl->node = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor::from_impl(std::move(impl));
}

}  // namespace

Tensor make_op(std::string_view op, Shape shape, std::vector<double> data,
               std::initializer_list<Tensor> inputs, detail::BackwardFn backward) {
  return make_op_impl(op, std::move(shape), std::move(data), inputs, std::move(backward));
}

Tensor make_op(std::string_view op, Shape shape, std::vector<double> data,
               const std::vector<Tensor>& inputs, detail::BackwardFn backward) {
  return make_op_impl(op, std::move(shape), std::move(data), inputs, std::move(backward));
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.impl()->node) return tape;
  std::unordered_set<const detail::TensorImpl*> visited;
  // Iterative post-order DFS; a frame is (node, next input index).
  std::vector<std::pair<detail::ImplPtr, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto& inputs = impl->node->inputs;
    if (next < inputs.size()) {
      const auto& child = inputs[next++];
      if (child->node && visited.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    tape.order_.push_back(impl);
    stack.pop_back();
  }
  return tape;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const Tape tape = Tape::record(loss);
  if (tape.empty()) throw Error("backward: loss does not depend on any trainable tensor");

  detail::grad_buffer(*loss.impl())[0] += 1.0;
  const auto nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const auto& impl = *it;
    if (impl->grad.empty()) continue;
    impl->node->backward(*impl);
  }
  for (const auto& impl : nodes) {
    impl->node.reset();
    impl->requires_grad = false;
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
}

}  // namespace ng4d
