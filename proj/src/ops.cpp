#include "sat/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace sat {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Wraps an eagerly computed result and, when recording, attaches `backward`.
template <typename T, typename F>
Tensor<T> finish(Tensor<T> out, std::initializer_list<const Tensor<T>*> inputs, F&& backward) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) return out;
  bool any = false;
  for (const Tensor<T>* in : inputs) {
    if (in->defined() && in->requires_grad()) any = true;
  }
  if (!any) return out;
  out.set_requires_grad(true);
  std::vector<NodePtr<T>> nodes;
  for (const Tensor<T>* in : inputs) {
    if (in->defined()) nodes.push_back(in->node());
  }
  tape->record(std::move(nodes), out.node(), std::forward<F>(backward));
  return out;
}

template <typename T>
bool wants_grad(TensorNode<T>* node) {
  return node != nullptr && node->requires_grad;
}

template <typename T>
T* grad_of(TensorNode<T>* node) {
  node->ensure_grad();
  return node->grad.data();
}

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A^T * B with A stored [k,m], B [k,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose_into(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

// C[m,n] += A[m,k] * B^T with B stored [n,k]
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             std::vector<T>& scratch) {
  scratch.resize(n * k);
  transpose_into(n, k, b, scratch.data());
  gemm_nn(m, n, k, a, scratch.data(), c);
}

enum class Broadcast { same, scalar, suffix };

template <typename T>
Broadcast classify(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.size() == 1) return Broadcast::scalar;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() < sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()))) {
    return Broadcast::suffix;
  }
  throw DimensionError(std::string(op) + ": cannot combine " + to_string(sa) + " with " + to_string(sb));
}

template <typename T>
Tensor<T> like(const Tensor<T>& a) {
  return Tensor<T>(a.shape(), std::vector<T>(a.size()));
}

void require_rank(std::size_t rank, std::size_t want, const char* op, const Shape& shape) {
  if (rank != want) {
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(want) + ", got " + to_string(shape));
  }
}

}  // namespace

// ---------------------------------------------------------------- products

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.rank(), 2, "matmul", a.shape());
  require_rank(b.rank(), 2, "matmul", b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Tensor<T> out = Tensor<T>::zeros({m, n});
  gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data().data());
  auto* an = a.node().get();
  auto* bn = b.node().get();
  auto* on = out.node().get();
  return finish(out, {&a, &b}, [=] {
    const T* g = on->grad.data();
    std::vector<T> scratch;
    if (wants_grad(an)) gemm_nt(m, k, n, g, bn->data.data(), grad_of(an), scratch);
    if (wants_grad(bn)) gemm_tn(k, n, m, an->data.data(), g, grad_of(bn));
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() < 3 || a.rank() != b.rank()) {
    throw DimensionError("bmm: operands must share a rank >= 3, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw DimensionError("bmm: batch axes differ, " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
  }
  const std::size_t m = a.dim(r - 2), k = a.dim(r - 1);
  const std::size_t bk = transpose_b ? b.dim(r - 1) : b.dim(r - 2);
  const std::size_t n = transpose_b ? b.dim(r - 2) : b.dim(r - 1);
  if (bk != k) {
    throw DimensionError("bmm: inner dimensions differ, " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t batch = a.size() / (m * k);
  Shape shape(a.shape().begin(), a.shape().end() - 2);
  shape.push_back(m);
  shape.push_back(n);
  Tensor<T> out = Tensor<T>::zeros(shape);
  {
    std::vector<T> scratch;
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    T* od = out.data().data();
    for (std::size_t s = 0; s < batch; ++s) {
      if (transpose_b) {
        gemm_nt(m, n, k, ad + s * m * k, bd + s * n * k, od + s * m * n, scratch);
      } else {
        gemm_nn(m, n, k, ad + s * m * k, bd + s * k * n, od + s * m * n);
      }
    }
  }
  auto* an = a.node().get();
  auto* bn = b.node().get();
  auto* on = out.node().get();
  return finish(out, {&a, &b}, [=] {
    std::vector<T> scratch;
    const T* g = on->grad.data();
    for (std::size_t s = 0; s < batch; ++s) {
      const T* gs = g + s * m * n;
      if (wants_grad(an)) {
        T* ga = grad_of(an) + s * m * k;
        if (transpose_b) {
          gemm_nn(m, k, n, gs, bn->data.data() + s * n * k, ga);  // g[m,n] * B[n,k]
        } else {
          gemm_nt(m, k, n, gs, bn->data.data() + s * k * n, ga, scratch);  // g * B^T
        }
      }
      if (wants_grad(bn)) {
        if (transpose_b) {
          T* gb = grad_of(bn) + s * n * k;
          gemm_tn(n, k, m, gs, an->data.data() + s * m * k, gb);  // g^T[n,m] * A[m,k]
        } else {
          T* gb = grad_of(bn) + s * k * n;
          gemm_tn(k, n, m, an->data.data() + s * m * k, gs, gb);  // A^T * g
        }
      }
    }
  });
}

// ------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = classify(a, b, "add");
  Tensor<T> out = like(a);
  const std::size_t nb = b.size();
  {
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    T* od = out.data().data();
    if (kind == Broadcast::same) {
      for (std::size_t i = 0; i < a.size(); ++i) od[i] = ad[i] + bd[i];
    } else {
      for (std::size_t i = 0; i < a.size(); ++i) od[i] = ad[i] + bd[i % nb];
    }
  }
  auto* an = a.node().get();
  auto* bn = b.node().get();
  auto* on = out.node().get();
  return finish(out, {&a, &b}, [=] {
    const T* g = on->grad.data();
    const std::size_t n = on->data.size();
    if (wants_grad(an)) {
      T* ga = grad_of(an);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (wants_grad(bn)) {
      T* gb = grad_of(bn);
      for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const Broadcast kind = classify(a, b, "sub");
  Tensor<T> out = like(a);
  const std::size_t nb = b.size();
  {
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    T* od = out.data().data();
    if (kind == Broadcast::same) {
      for (std::size_t i = 0; i < a.size(); ++i) od[i] = ad[i] - bd[i];
    } else {
      for (std::size_t i = 0; i < a.size(); ++i) od[i] = ad[i] - bd[i % nb];
    }
  }
  auto* an = a.node().get();
  auto* bn = b.node().get();
  auto* on = out.node().get();
  return finish(out, {&a, &b}, [=] {
    const T* g = on->grad.data();
    const std::size_t n = on->data.size();
    if (wants_grad(an)) {
      T* ga = grad_of(an);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (wants_grad(bn)) {
      T* gb = grad_of(bn);
      for (std::size_t i = 0; i < n; ++i) gb[i % nb] -= g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  classify(a, b, "mul");
  Tensor<T> out = like(a);
  const std::size_t nb = b.size();
  {
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    T* od = out.data().data();
    for (std::size_t i = 0; i < a.size(); ++i) od[i] = ad[i] * bd[i % nb];
  }
  auto* an = a.node().get();
  auto* bn = b.node().get();
  auto* on = out.node().get();
  return finish(out, {&a, &b}, [=] {
    const T* g = on->grad.data();
    const std::size_t n = on->data.size();
    if (wants_grad(an)) {
      T* ga = grad_of(an);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bn->data[i % nb];
    }
    if (wants_grad(bn)) {
      T* gb = grad_of(bn);
      for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * an->data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    for (std::size_t i = 0; i < on->grad.size(); ++i) ga[i] += on->grad[i] * c;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  Tensor<T> out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + c;
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    for (std::size_t i = 0; i < on->grad.size(); ++i) ga[i] += on->grad[i];
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  Tensor<T> out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a[i]);
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    for (std::size_t i = 0; i < on->grad.size(); ++i) {
      const T y = on->data[i];
      ga[i] += on->grad[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out = like(a);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T x = a[i];
    out[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  }
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    T* ga = grad_of(an);
    for (std::size_t i = 0; i < on->grad.size(); ++i) {
      const T x = an->data[i];
      const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
      ga[i] += on->grad[i] * (cdf + x * pdf);
    }
  });
}

// ------------------------------------------------------------ row-wise ops

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  if (a.rank() == 0) throw DimensionError("softmax_rows on rank-0 tensor");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  Tensor<T> out = like(a);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.data().data() + r * n;
    T* y = out.data().data() + r * n;
    const T mx = *std::max_element(x, x + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = on->data.data() + r * n;
      const T* g = on->grad.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& a) {
  if (a.rank() == 0) throw DimensionError("log_softmax_rows on rank-0 tensor");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  Tensor<T> out = like(a);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.data().data() + r * n;
    T* y = out.data().data() + r * n;
    const T mx = *std::max_element(x, x + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(x[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
  }
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = on->data.data() + r * n;
      const T* g = on->grad.data() + r * n;
      T gsum = 0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (!(eps > T(0))) throw ContractError("layernorm: eps must be positive");
  const std::size_t d = a.shape().back();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layernorm: gain/bias length must equal last axis of " + to_string(a.shape()));
  }
  const std::size_t rows = a.size() / d;
  Tensor<T> out = like(a);
  std::vector<T> xhat(a.size());
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.data().data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= T(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (x[j] - mu) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * gain[j] + bias[j];
    }
  }
  auto* an = a.node().get();
  auto* gn = gain.node().get();
  auto* bn = bias.node().get();
  auto* on = out.node().get();
  return finish(out, {&a, &gain, &bias}, [=, xhat = std::move(xhat), rstd = std::move(rstd)] {
    const T* g = on->grad.data();
    if (wants_grad(gn)) {
      T* gg = grad_of(gn);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
    }
    if (wants_grad(bn)) {
      T* gb = grad_of(bn);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
    }
    if (wants_grad(an)) {
      T* ga = grad_of(an);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dx = 0, mean_dx_xhat = 0;
        for (std::size_t j = 0; j < d; ++j) {
          const T dxhat = g[r * d + j] * gn->data[j];
          mean_dx += dxhat;
          mean_dx_xhat += dxhat * xhat[r * d + j];
        }
        mean_dx /= T(d);
        mean_dx_xhat /= T(d);
        for (std::size_t j = 0; j < d; ++j) {
          const T dxhat = g[r * d + j] * gn->data[j];
          ga[r * d + j] += rstd[r] * (dxhat - mean_dx - xhat[r * d + j] * mean_dx_xhat);
        }
      }
    }
  });
}

// -------------------------------------------------------------- convolution

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  if (input.rank() != 3 && input.rank() != 4) {
    throw DimensionError("conv2d: input must be [N,C,H,W] or [C,H,W], got " + to_string(input.shape()));
  }
  require_rank(kernel.rank(), 4, "conv2d kernel", kernel.shape());
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const bool batched = input.rank() == 4;
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? input.dim(0) : 1;
  const std::size_t channels = input.dim(off), height = input.dim(off + 1), width = input.dim(off + 2);
  const std::size_t outc = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != channels) {
    throw DimensionError("conv2d: kernel " + to_string(kernel.shape()) + " does not match input " +
                         to_string(input.shape()));
  }
  if (bias.defined() && bias.size() != outc) throw DimensionError("conv2d: bias length must equal output channels");
  if (height + 2 * padding < kh || width + 2 * padding < kw) throw DimensionError("conv2d: kernel larger than input");
  const std::size_t oh = (height + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (width + 2 * padding - kw) / stride + 1;
  const std::size_t positions = oh * ow;
  const std::size_t patch = channels * kh * kw;

  auto im2col = [=](const T* img, T* cols) {
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          T* row = cols + ((c * kh + ky) * kw + kx) * positions;
          for (std::size_t y = 0; y < oh; ++y) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(padding);
            for (std::size_t x = 0; x < ow; ++x) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(x * stride + kx) - static_cast<std::ptrdiff_t>(padding);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(height) &&
                                  ix < static_cast<std::ptrdiff_t>(width);
              row[y * ow + x] = inside ? img[(c * height + static_cast<std::size_t>(iy)) * width +
                                             static_cast<std::size_t>(ix)]
                                       : T(0);
            }
          }
        }
  };

  Shape shape = batched ? Shape{batch, outc, oh, ow} : Shape{outc, oh, ow};
  Tensor<T> out = Tensor<T>::zeros(shape);
  const bool recording = active_tape<T>() != nullptr &&
                         (input.requires_grad() || kernel.requires_grad() || (bias.defined() && bias.requires_grad()));
  std::vector<T> saved_cols(recording ? batch * patch * positions : patch * positions);
  for (std::size_t n = 0; n < batch; ++n) {
    T* cols = saved_cols.data() + (recording ? n * patch * positions : 0);
    im2col(input.data().data() + n * channels * height * width, cols);
    T* o = out.data().data() + n * outc * positions;
    if (bias.defined()) {
      for (std::size_t c = 0; c < outc; ++c) std::fill(o + c * positions, o + (c + 1) * positions, bias[c]);
    }
    gemm_nn(outc, positions, patch, kernel.data().data(), cols, o);
  }
  if (!recording) return out;

  auto* in_node = input.node().get();
  auto* kn = kernel.node().get();
  auto* bn = bias.defined() ? bias.node().get() : nullptr;
  auto* on = out.node().get();
  return finish(out, {&input, &kernel, &bias}, [=, cols_all = std::move(saved_cols)] {
    std::vector<T> scratch;
    std::vector<T> dcols;
    for (std::size_t n = 0; n < batch; ++n) {
      const T* g = on->grad.data() + n * outc * positions;
      const T* cols = cols_all.data() + n * patch * positions;
      if (wants_grad(kn)) gemm_nt(outc, patch, positions, g, cols, grad_of(kn), scratch);
      if (wants_grad(bn)) {
        T* gb = grad_of(bn);
        for (std::size_t c = 0; c < outc; ++c)
          for (std::size_t p = 0; p < positions; ++p) gb[c] += g[c * positions + p];
      }
      if (wants_grad(in_node)) {
        dcols.assign(patch * positions, T(0));
        gemm_tn(patch, positions, outc, kn->data.data(), g, dcols.data());
        T* gi = grad_of(in_node) + n * channels * height * width;
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const T* row = dcols.data() + ((c * kh + ky) * kw + kx) * positions;
              for (std::size_t y = 0; y < oh; ++y) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
                for (std::size_t x = 0; x < ow; ++x) {
                  const std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(x * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
                  gi[(c * height + static_cast<std::size_t>(iy)) * width + static_cast<std::size_t>(ix)] +=
                      row[y * ow + x];
                }
              }
            }
      }
    }
  });
}

template <typename T>
Tensor<T> avgpool_global(const Tensor<T>& a) {
  if (a.rank() < 3) throw DimensionError("avgpool_global needs [.., H, W], got " + to_string(a.shape()));
  const std::size_t area = a.dim(a.rank() - 1) * a.dim(a.rank() - 2);
  const std::size_t maps = a.size() / area;
  Shape shape(a.shape().begin(), a.shape().end() - 2);
  Tensor<T> out = Tensor<T>::zeros(shape);
  for (std::size_t m = 0; m < maps; ++m) {
    T total = 0;
    for (std::size_t i = 0; i < area; ++i) total += a[m * area + i];
    out[m] = total / T(area);
  }
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    for (std::size_t m = 0; m < maps; ++m) {
      const T g = on->grad[m] / T(area);
      for (std::size_t i = 0; i < area; ++i) ga[m * area + i] += g;
    }
  });
}

// ------------------------------------------------------------------ layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: " + to_string(a.shape()) + " cannot become " + to_string(shape));
  }
  Tensor<T> out(std::move(shape), a.values());
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    for (std::size_t i = 0; i < on->grad.size(); ++i) ga[i] += on->grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  if (axes.size() != r) throw DimensionError("permute: axis list length must equal rank");
  std::vector<bool> seen(r, false);
  for (std::size_t ax : axes) {
    if (ax >= r || seen[ax]) throw DimensionError("permute: axes must be a permutation");
    seen[ax] = true;
  }
  Shape shape(r);
  for (std::size_t i = 0; i < r; ++i) shape[i] = a.dim(axes[i]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * a.dim(i);
  // source offset for each destination element
  std::vector<std::size_t> source(a.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < a.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[axes[i]];
    source[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor<T> out = Tensor<T>::zeros(shape);
  for (std::size_t i = 0; i < source.size(); ++i) out[i] = a[source[i]];
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=, source = std::move(source)] {
    T* ga = grad_of(an);
    for (std::size_t i = 0; i < source.size(); ++i) ga[source[i]] += on->grad[i];
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || length == 0 || start + length > a.dim(axis)) {
    throw DimensionError("slice: [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                         std::to_string(axis) + " of " + to_string(a.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t extent = a.dim(axis);
  Shape shape = a.shape();
  shape[axis] = length;
  Tensor<T> out = Tensor<T>::zeros(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = a.data().data() + (o * extent + start) * inner;
    std::copy(src, src + length * inner, out.data().data() + o * length * inner);
  }
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    for (std::size_t o = 0; o < outer; ++o) {
      T* dst = ga + (o * extent + start) * inner;
      const T* g = on->grad.data() + o * length * inner;
      for (std::size_t i = 0; i < length * inner; ++i) dst[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && p.dim(i) != first[i]) {
        throw DimensionError("concat: " + to_string(p.shape()) + " vs " + to_string(first));
      }
    }
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Tensor<T> out = Tensor<T>::zeros(shape);
  const std::size_t total = shape[axis];
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    const std::size_t len = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = p.data().data() + o * len * inner;
      std::copy(src, src + len * inner, out.data().data() + (o * total + at) * inner);
    }
    at += len;
  }
  Tape<T>* tape = active_tape<T>();
  const bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor<T>& p) { return p.requires_grad(); });
  if (tape == nullptr || !any) return out;
  out.set_requires_grad(true);
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  std::vector<TensorNode<T>*> raw;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    raw.push_back(p.node().get());
  }
  auto* on = out.node().get();
  tape->record(std::move(nodes), out.node(), [=] {
    for (std::size_t k = 0; k < raw.size(); ++k) {
      if (!wants_grad(raw[k])) continue;
      const std::size_t len = raw[k]->shape[axis];
      T* gp = grad_of(raw[k]);
      for (std::size_t o = 0; o < outer; ++o) {
        const T* g = on->grad.data() + (o * total + offsets[k]) * inner;
        T* dst = gp + o * len * inner;
        for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> expand(const Tensor<T>& a, std::size_t n) {
  if (n == 0) throw DimensionError("expand: count must be positive");
  Shape shape{n};
  shape.insert(shape.end(), a.shape().begin(), a.shape().end());
  Tensor<T> out = Tensor<T>::zeros(shape);
  for (std::size_t k = 0; k < n; ++k) std::copy(a.data().begin(), a.data().end(), out.data().begin() + k * a.size());
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    const std::size_t m = an->data.size();
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < m; ++i) ga[i] += on->grad[k * m + i];
  });
}

// ------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(total);
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    const T g = on->grad[0];
    for (std::size_t i = 0; i < an->data.size(); ++i) ga[i] += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / T(a.size()));
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::size_t>& index) {
  require_rank(a.rank(), 2, "gather_rows", a.shape());
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (index.size() != m) throw DimensionError("gather_rows: need one index per row");
  for (std::size_t i : index) {
    if (i >= n) throw DimensionError("gather_rows: column index out of range");
  }
  Tensor<T> out = Tensor<T>::zeros({m});
  for (std::size_t r = 0; r < m; ++r) out[r] = a[r * n + index[r]];
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    for (std::size_t r = 0; r < m; ++r) ga[r * n + index[r]] += on->grad[r];
  });
}

template <typename T>
Tensor<T> scatter(const Tensor<T>& a, Shape shape, const std::vector<std::size_t>& positions) {
  if (positions.size() != a.size()) throw DimensionError("scatter: need one position per element");
  Tensor<T> out = Tensor<T>::zeros(std::move(shape));
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= out.size()) throw DimensionError("scatter: position out of range");
    out[positions[i]] = a[i];
  }
  auto* an = a.node().get();
  auto* on = out.node().get();
  return finish(out, {&a}, [=] {
    T* ga = grad_of(an);
    for (std::size_t i = 0; i < positions.size(); ++i) ga[i] += on->grad[positions[i]];
  });
}

#define SAT_INSTANTIATE_OPS(T)                                                                          \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> scale(const Tensor<T>&, T);                                                        \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                   \
  template Tensor<T> tanh(const Tensor<T>&);                                                            \
  template Tensor<T> gelu(const Tensor<T>&);                                                            \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                                    \
  template Tensor<T> log_softmax_rows(const Tensor<T>&);                                                \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> avgpool_global(const Tensor<T>&);                                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                  \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                        \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                    \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                                \
  template Tensor<T> expand(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                             \
  template Tensor<T> mean(const Tensor<T>&);                                                            \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::size_t>&);                    \
  template Tensor<T> scatter(const Tensor<T>&, Shape, const std::vector<std::size_t>&);

SAT_INSTANTIATE_OPS(float)
SAT_INSTANTIATE_OPS(double)

#undef SAT_INSTANTIATE_OPS

}  // namespace sat
