#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sat/errors.hpp"

namespace sat {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Storage behind a Tensor handle. Several handles may share one node.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

// Dense row-major array with optional participation in the gradient tape.
// Copies are shallow: a Tensor is a reference to its node.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);
  // A leaf that accumulates gradient.
  static Tensor parameter(Shape shape, std::vector<T> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }
  T item() const;
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  // Allocates a zero buffer on first access.
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();

  bool all_finite() const;
  // Deep copy of data; the result is a fresh leaf without gradient.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

// Ordered record of differentiable operations. Inputs of every op exist before
// the op is recorded, so reverse recording order is a valid topological order.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<TensorNode<T>>;
  using BackwardFn = std::function<void()>;

  void record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn backward);

  // Populates grad on every requires_grad tensor reachable from `loss`.
  // Leaf gradients accumulate across calls; intermediate gradients are reset.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

 private:
  struct Op {
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn backward;
  };
  std::vector<Op> ops_;
};

// The tape that ops on this thread record onto, or nullptr (inference).
template <typename T>
Tape<T>* active_tape();

// Installs a tape as active for the current thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Suspends recording on this thread (evaluation passes).
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class TapeScope<float>;
extern template class TapeScope<double>;
extern template class NoGradScope<float>;
extern template class NoGradScope<double>;

}  // namespace sat
