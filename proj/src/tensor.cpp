#include "sat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sat {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + to_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  std::vector<T> v(numel(shape), value);
  return Tensor(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor({1}, {value});
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  return Tensor(std::move(shape), std::move(values), true);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(node_->data.begin(), node_->data.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->data);
}

template <typename T>
void Tape<T>::record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn backward) {
  ops_.push_back(Op{std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss that is not connected to any parameter");
  }
  const auto& target = loss.node();
  auto it = std::find_if(ops_.rbegin(), ops_.rend(), [&](const Op& op) { return op.output == target; });
  if (it == ops_.rend()) {
    // The loss is a leaf parameter itself.
    target->ensure_grad();
    target->grad[0] += T(1);
    return;
  }
  for (auto& op : ops_) {
    op.output->ensure_grad();
    std::fill(op.output->grad.begin(), op.output->grad.end(), T(0));
  }
  target->grad[0] = T(1);
  for (; it != ops_.rend(); ++it) it->backward();
}

namespace {

template <typename T>
Tape<T>*& active_slot() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

}  // namespace

template <typename T>
Tape<T>* active_tape() {
  return active_slot<T>();
}

template <typename T>
TapeScope<T>::TapeScope(Tape<T>& tape) : previous_(active_slot<T>()) {
  active_slot<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  active_slot<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(active_slot<T>()) {
  active_slot<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  active_slot<T>() = previous_;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;
template Tape<float>* active_tape<float>();
template Tape<double>* active_tape<double>();

}  // namespace sat
