#pragma once

// Dense row-major float64 tensors with define-by-run reverse-mode autodiff.
//
// A Tensor is a shared handle to an immutable value. Operations whose inputs
// require gradients attach a Node that records the inputs and a backward
// closure; backward() linearizes those nodes into a Tape, runs it in reverse
// and then releases it.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ng4d/error.hpp"

namespace ng4d {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;
using BackwardFn = std::function<void(const TensorImpl& out)>;

struct Node {
  std::string op;
  std::vector<ImplPtr> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves and constants
};

/// Gradient buffer of `impl`, allocated and zero-filled on first use.
std::span<double> grad_buffer(TensorImpl& impl);

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor from_impl(detail::ImplPtr impl);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  bool requires_grad() const;
  bool is_leaf() const;
  /// Marks a leaf as a trainable parameter. Throws for non-leaf tensors.
  void set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();

  /// Writable storage; only valid on leaves (parameter updates).
  std::span<double> mutable_values();

  /// Same values, cut from any recorded graph.
  Tensor detach() const;

  const detail::ImplPtr& impl() const { return impl_; }

 private:
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}
  detail::ImplPtr impl_;
};

/// Builds an operation result. The output is finite-checked; when any input
/// requires a gradient the result records `backward`, which reads
/// `out.grad` and accumulates into the inputs through detail::grad_buffer.
Tensor make_op(std::string_view op, Shape shape, std::vector<double> data,
               std::initializer_list<Tensor> inputs, detail::BackwardFn backward);
Tensor make_op(std::string_view op, Shape shape, std::vector<double> data,
               const std::vector<Tensor>& inputs, detail::BackwardFn backward);

/// Topologically ordered record of the operations reachable from a root.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }
  /// Non-leaf tensors, inputs before consumers.
  std::span<const detail::ImplPtr> nodes() const { return order_; }

 private:
  std::vector<detail::ImplPtr> order_;
};

/// Populates grad() of every requires-grad leaf reachable from `loss` with
/// d(loss)/d(leaf), accumulating into existing buffers, then releases the
/// recorded graph. `loss` must hold exactly one element.
void backward(const Tensor& loss);

}  // namespace ng4d
