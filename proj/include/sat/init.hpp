#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "sat/tensor.hpp"

namespace sat {

// Normal(0, std) samples, redrawn when they fall outside +-2 std.
std::vector<double> truncated_normal(std::mt19937_64& rng, std::size_t n, double std);

template <typename T>
Tensor<T> make_parameter(Shape shape, const std::vector<double>& values) {
  std::vector<T> v(values.begin(), values.end());
  return Tensor<T>::parameter(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> trunc_normal_parameter(Shape shape, double std, std::mt19937_64& rng) {
  const std::size_t n = numel(shape);
  return make_parameter<T>(std::move(shape), truncated_normal(rng, n, std));
}

template <typename T>
Tensor<T> constant_parameter(Shape shape, double value) {
  return Tensor<T>::parameter(shape, std::vector<T>(numel(shape), static_cast<T>(value)));
}

// Same values in a different precision, keeping requires_grad.
template <typename U, typename T>
Tensor<U> cast_tensor(const Tensor<T>& t) {
  if (!t.defined()) return Tensor<U>();
  std::vector<U> v(t.data().begin(), t.data().end());
  return Tensor<U>(t.shape(), std::move(v), t.requires_grad());
}

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

}  // namespace sat
