#pragma once

#include <cstddef>
#include <vector>

#include "sat/tensor.hpp"

// Differentiable primitives. Every op computes eagerly; when a tape is active
// on the calling thread and some input requires grad, the op also records its
// backward rule. Reductions run in a fixed sequential order.
//
// Broadcasting: binary elementwise ops accept a right operand of the same
// shape, a size-1 tensor, or one whose shape is a trailing suffix of the left
// operand's shape.
namespace sat {

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Batched product over all leading axes: [..., m, k] x [..., k, n]. With
// transpose_b the right operand is laid out [..., n, k].
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c);

template <typename T> Tensor<T> tanh(const Tensor<T>& a);
// Exact (erf) form.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

// Softmax over the last axis, max-subtracted.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& a);
template <typename T> Tensor<T> log_softmax_rows(const Tensor<T>& a);

// Normalizes over the last axis, then applies gain and bias of that length.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

// input [N, C, H, W] or [C, H, W]; kernel [O, C, k, k]; bias [O] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);
// Mean over the two trailing spatial axes: [N, C, H, W] -> [N, C], [C, H, W] -> [C].
template <typename T> Tensor<T> avgpool_global(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes);
template <typename T> Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
// Repeats `a` along a new leading axis of length n.
template <typename T> Tensor<T> expand(const Tensor<T>& a, std::size_t n);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
// out[i] = a[i, index[i]] for a of shape [m, n].
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::size_t>& index);
// Zero tensor of `shape` with out.flat[positions[i]] = a[i]; positions must be distinct.
template <typename T>
Tensor<T> scatter(const Tensor<T>& a, Shape shape, const std::vector<std::size_t>& positions);

}  // namespace sat
