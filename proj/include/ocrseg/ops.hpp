#pragma once

// Differentiable kernels over Tensor<T>.
//
// Layout conventions: matrices are row-major [rows x cols]; feature maps are
// channel-first [C x H x W] and are viewed as [C x N] matrices (N = H*W) via
// reshape, which aliases the data buffer.
//
// Every kernel reports a nominal FLOP count: multiply-add = 2, elementwise
// arithmetic = 1, frozen batch norm = 2 per element, ReLU = 1 per element,
// softmax = 5 per element. Data movement (reshape, transpose, concat, tile,
// nearest upsampling) is free.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ocrseg/tensor.hpp"

namespace ocrseg {

namespace detail {

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T, typename Fn>
void record_op(const char* op, std::initializer_list<Tensor<T>> inputs, Tensor<T>& out, Fn&& fn) {
  GradTape<T>* tape = active_tape<T>();
  if (tape == nullptr) return;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return;
  out.set_requires_grad(true);
  std::vector<NodePtr<T>> nodes;
  nodes.reserve(inputs.size());
  for (const auto& t : inputs) nodes.push_back(t.node());
  tape->record(op, std::move(nodes), out.node(), std::forward<Fn>(fn));
}

// Gradient sink for `t`, or nullptr when t does not take gradients.
template <typename T>
T* grad_sink(const Tensor<T>& t) {
  if (!t.requires_grad()) return nullptr;
  return t.node()->ensure_grad().data();
}

inline void flops(std::int64_t n) { note_flops(n); }

// C[MxN] += A[MxK] * B[KxN]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* crow = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      const T* brow = B + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

// C[MxN] += A[MxK] * B[NxK]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    const T* arow = A + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const T* brow = B + j * K;
      T acc = T(0);
      for (std::size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
      C[i * N + j] += acc;
    }
  }
}

// C[MxN] += A[KxM]^T * B[KxN]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* brow = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = A[k * M + i];
      if (a == T(0)) continue;
      T* crow = C + i * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                         shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor<T> out(Shape{M, N});
  detail::gemm_nn(M, N, K, a.data().data(), b.data().data(), out.mutable_data().data());
  detail::flops(static_cast<std::int64_t>(2 * M * K * N));
  detail::record_op("matmul", {a, b}, out, [a, b, M, N, K](const Buffer<T>& g) {
    if (T* ga = detail::grad_sink(a)) detail::gemm_nt(M, K, N, g.data(), b.data().data(), ga);
    if (T* gb = detail::grad_sink(b)) detail::gemm_tn(K, N, M, a.data().data(), g.data(), gb);
  });
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t R = a.dim(0), C = a.dim(1);
  Tensor<T> out(Shape{C, R});
  auto src = a.data();
  auto dst = out.mutable_data();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) dst[c * R + r] = src[r * C + c];
  detail::record_op("transpose", {a}, out, [a, R, C](const Buffer<T>& g) {
    if (T* ga = detail::grad_sink(a))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += g[c * R + r];
  });
  return out;
}

// Aliases the data buffer under a new shape with the same element count.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), a.node()->data);
  detail::record_op("reshape", {a}, out, [a](const Buffer<T>& g) {
    if (T* ga = detail::grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  detail::flops(static_cast<std::int64_t>(o.size()));
  detail::record_op("add", {a, b}, out, [a, b](const Buffer<T>& g) {
    if (T* ga = detail::grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (T* gb = detail::grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto x = a.data(), y = b.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  detail::flops(static_cast<std::int64_t>(o.size()));
  detail::record_op("mul", {a, b}, out, [a, b](const Buffer<T>& g) {
    auto x = a.data(), y = b.data();
    if (T* ga = detail::grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    if (T* gb = detail::grad_sink(b))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = s * x[i];
  detail::flops(static_cast<std::int64_t>(o.size()));
  detail::record_op("scale", {a}, out, [a, s](const Buffer<T>& g) {
    if (T* ga = detail::grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
  detail::flops(static_cast<std::int64_t>(o.size()));
  detail::record_op("relu", {a}, out, [a](const Buffer<T>& g) {
    auto x = a.data();
    if (T* ga = detail::grad_sink(a))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > T(0)) ga[i] += g[i];
  });
  return out;
}

// Row-wise softmax of x / temperature with per-row max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, T temperature = T(1)) {
  detail::require_rank(x, 2, "softmax_rows");
  if (!(temperature > T(0)) || !std::isfinite(temperature)) {
    throw ParameterError("softmax_rows: temperature must be positive and finite, got " + std::to_string(temperature));
  }
  const std::size_t R = x.dim(0), C = x.dim(1);
  const T inv_t = T(1) / temperature;
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < R; ++r) {
    const T* row = in.data() + r * C;
    T* orow = o.data() + r * C;
    T mx = row[0];
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    T z = T(0);
    for (std::size_t c = 0; c < C; ++c) {
      orow[c] = std::exp((row[c] - mx) * inv_t);
      z += orow[c];
    }
    const T inv_z = T(1) / z;
    for (std::size_t c = 0; c < C; ++c) orow[c] *= inv_z;
  }
  detail::flops(static_cast<std::int64_t>(5 * R * C));
  detail::record_op("softmax_rows", {x}, out, [x, out, R, C, inv_t](const Buffer<T>& g) {
    T* gx = detail::grad_sink(x);
    if (!gx) return;
    auto y = out.data();
    for (std::size_t r = 0; r < R; ++r) {
      const T* yr = y.data() + r * C;
      const T* gr = g.data() + r * C;
      T dot = T(0);
      for (std::size_t c = 0; c < C; ++c) dot += gr[c] * yr[c];
      for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += inv_t * yr[c] * (gr[c] - dot);
    }
  });
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  detail::flops(static_cast<std::int64_t>(a.numel()));
  detail::record_op("sum", {a}, out, [a](const Buffer<T>& g) {
    if (T* ga = detail::grad_sink(a))
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += g[0];
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// Concatenates along dim 0; trailing dims must agree.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape pt(p.shape().begin() + 1, p.shape().end());
    if (pt != tail) {
      throw DimensionError("concat_rows: trailing shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  Tensor<T> out(shape);
  auto o = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.numel();
  }
  GradTape<T>* tape = active_tape<T>();
  const bool any = std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
  if (tape && any) {
    out.set_requires_grad(true);
    std::vector<detail::NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    tape->record("concat_rows", nodes, out.node(), [parts](const Buffer<T>& g) {
      std::size_t off = 0;
      for (const auto& p : parts) {
        if (T* gp = detail::grad_sink(p))
          for (std::size_t i = 0; i < p.numel(); ++i) gp[i] += g[off + i];
        off += p.numel();
      }
    });
  }
  return out;
}

// x: [C x ...], bias: [C]
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t C = x.dim(0);
  if (bias.numel() != C) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  const std::size_t inner = x.numel() / C;
  Tensor<T> out(x.shape());
  auto in = x.data(), b = bias.data();
  auto o = out.mutable_data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < inner; ++i) o[c * inner + i] = in[c * inner + i] + b[c];
  detail::flops(static_cast<std::int64_t>(x.numel()));
  detail::record_op("add_channel_bias", {x, bias}, out, [x, bias, C, inner](const Buffer<T>& g) {
    if (T* gx = detail::grad_sink(x))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    if (T* gb = detail::grad_sink(bias))
      for (std::size_t c = 0; c < C; ++c) {
        T acc = T(0);
        for (std::size_t i = 0; i < inner; ++i) acc += g[c * inner + i];
        gb[c] += acc;
      }
  });
  return out;
}

// Per-channel affine normalisation with frozen statistics:
//   y = scale * (x - mean) / sqrt(var + eps) + shift
// Gradients flow to x, scale and shift; mean and var are constants.
template <typename T>
Tensor<T> frozen_batch_norm(const Tensor<T>& x, const Tensor<T>& bn_scale, const Tensor<T>& bn_shift,
                            const Tensor<T>& bn_mean, const Tensor<T>& bn_var, T eps) {
  const std::size_t C = x.dim(0);
  for (const Tensor<T>* p : {&bn_scale, &bn_shift, &bn_mean, &bn_var}) {
    if (p->numel() != C) {
      throw DimensionError("frozen_batch_norm: parameter " + shape_str(p->shape()) + " vs input " +
                           shape_str(x.shape()));
    }
  }
  const std::size_t inner = x.numel() / C;
  std::vector<T> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    const T v = bn_var[c] + eps;
    if (!(v > T(0))) throw ParameterError("frozen_batch_norm: variance + eps must be positive");
    inv_std[c] = T(1) / std::sqrt(v);
  }
  Tensor<T> out(x.shape());
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t c = 0; c < C; ++c) {
    const T a = bn_scale[c] * inv_std[c];
    const T b = bn_shift[c] - a * bn_mean[c];
    for (std::size_t i = 0; i < inner; ++i) o[c * inner + i] = a * in[c * inner + i] + b;
  }
  detail::flops(static_cast<std::int64_t>(2 * x.numel()));
  detail::record_op("frozen_batch_norm", {x, bn_scale, bn_shift}, out,
                    [x, bn_scale, bn_shift, bn_mean, inv_std, C, inner](const Buffer<T>& g) {
                      auto in = x.data();
                      T* gx = detail::grad_sink(x);
                      T* gs = detail::grad_sink(bn_scale);
                      T* gb = detail::grad_sink(bn_shift);
                      for (std::size_t c = 0; c < C; ++c) {
                        const T a = bn_scale[c] * inv_std[c];
                        T acc_s = T(0), acc_b = T(0);
                        for (std::size_t i = 0; i < inner; ++i) {
                          const T gi = g[c * inner + i];
                          if (gx) gx[c * inner + i] += a * gi;
                          acc_s += gi * (in[c * inner + i] - bn_mean[c]) * inv_std[c];
                          acc_b += gi;
                        }
                        if (gs) gs[c] += acc_s;
                        if (gb) gb[c] += acc_b;
                      }
                    });
  return out;
}

// [C x N] -> [C x 1] column mean.
template <typename T>
Tensor<T> mean_cols(const Tensor<T>& x) {
  detail::require_rank(x, 2, "mean_cols");
  const std::size_t C = x.dim(0), N = x.dim(1);
  Tensor<T> out(Shape{C, 1});
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t c = 0; c < C; ++c) {
    T acc = T(0);
    for (std::size_t i = 0; i < N; ++i) acc += in[c * N + i];
    o[c] = acc / static_cast<T>(N);
  }
  detail::flops(static_cast<std::int64_t>(C * N));
  detail::record_op("mean_cols", {x}, out, [x, C, N](const Buffer<T>& g) {
    if (T* gx = detail::grad_sink(x))
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < N; ++i) gx[c * N + i] += g[c] / static_cast<T>(N);
  });
  return out;
}

// [C x 1] -> [C x n] by repetition.
template <typename T>
Tensor<T> tile_cols(const Tensor<T>& x, std::size_t n) {
  detail::require_rank(x, 2, "tile_cols");
  if (x.dim(1) != 1) throw DimensionError("tile_cols: expected [C x 1], got " + shape_str(x.shape()));
  const std::size_t C = x.dim(0);
  Tensor<T> out(Shape{C, n});
  auto o = out.mutable_data();
  for (std::size_t c = 0; c < C; ++c) std::fill_n(o.begin() + static_cast<std::ptrdiff_t>(c * n), n, x[c]);
  detail::record_op("tile_cols", {x}, out, [x, C, n](const Buffer<T>& g) {
    if (T* gx = detail::grad_sink(x))
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < n; ++i) gx[c] += g[c * n + i];
  });
  return out;
}

// Stride-1 "same" convolution with an odd square kernel, dilation `rate`
// and zero padding. x: [C x H x W], w: [O x C x k x k] -> [O x H x W].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t rate = 1) {
  detail::require_rank(x, 3, "conv2d");
  detail::require_rank(w, 4, "conv2d");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = w.dim(0), k = w.dim(2);
  if (w.dim(1) != C) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  }
  if (w.dim(3) != k || k % 2 == 0) throw ConfigError("conv2d: kernel must be square with odd size");
  if (rate < 1) throw ConfigError("conv2d: dilation rate must be >= 1");
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  const auto Hs = static_cast<std::ptrdiff_t>(H), Ws = static_cast<std::ptrdiff_t>(W);
  const auto d = static_cast<std::ptrdiff_t>(rate);

  // Calls body(o, c, tap_index, dy, dx, y0, y1, x0, x1) for every tap with a
  // non-empty valid output window.
  auto for_taps = [=](auto&& body) {
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t c = 0; c < C; ++c)
        for (std::ptrdiff_t ky = 0; ky < static_cast<std::ptrdiff_t>(k); ++ky)
          for (std::ptrdiff_t kx = 0; kx < static_cast<std::ptrdiff_t>(k); ++kx) {
            const std::ptrdiff_t dy = (ky - r) * d, dx = (kx - r) * d;
            const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min(Hs, Hs - dy);
            const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(Ws, Ws - dx);
            if (y0 >= y1 || x0 >= x1) continue;
            const std::size_t tap = ((o * C + c) * k + static_cast<std::size_t>(ky)) * k + static_cast<std::size_t>(kx);
            body(o, c, tap, dy, dx, y0, y1, x0, x1);
          }
  };

  Tensor<T> out(Shape{O, H, W});
  {
    const T* in = x.data().data();
    const T* wt = w.data().data();
    T* o_ptr = out.mutable_data().data();
    for_taps([&](std::size_t o, std::size_t c, std::size_t tap, std::ptrdiff_t dy, std::ptrdiff_t dx, std::ptrdiff_t y0,
                 std::ptrdiff_t y1, std::ptrdiff_t x0, std::ptrdiff_t x1) {
      const T wv = wt[tap];
      for (std::ptrdiff_t y = y0; y < y1; ++y) {
        T* orow = o_ptr + (o * H + static_cast<std::size_t>(y)) * W;
        const T* irow = in + (c * H + static_cast<std::size_t>(y + dy)) * W + dx;
        for (std::ptrdiff_t xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
      }
    });
  }
  detail::flops(static_cast<std::int64_t>(2 * O * C * k * k * H * W));
  detail::record_op("conv2d", {x, w}, out, [x, w, for_taps, H, W](const Buffer<T>& g) {
    T* gx = detail::grad_sink(x);
    T* gw = detail::grad_sink(w);
    const T* in = x.data().data();
    const T* wt = w.data().data();
    for_taps([&](std::size_t o, std::size_t c, std::size_t tap, std::ptrdiff_t dy, std::ptrdiff_t dx, std::ptrdiff_t y0,
                 std::ptrdiff_t y1, std::ptrdiff_t x0, std::ptrdiff_t x1) {
      T acc = T(0);
      for (std::ptrdiff_t y = y0; y < y1; ++y) {
        const T* grow = g.data() + (o * H + static_cast<std::size_t>(y)) * W;
        const std::size_t ioff = (c * H + static_cast<std::size_t>(y + dy)) * W;
        for (std::ptrdiff_t xx = x0; xx < x1; ++xx) {
          const std::size_t idx = ioff + static_cast<std::size_t>(xx + dx);
          if (gx) gx[idx] += wt[tap] * grow[xx];
          acc += in[idx] * grow[xx];
        }
      }
      if (gw) gw[tap] += acc;
    });
  });
  return out;
}

// Adaptive average pooling of [C x H x W] onto a bins x bins grid. Cell i
// covers rows [floor(i*H/bins), ceil((i+1)*H/bins)), likewise for columns.
template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::size_t bins) {
  detail::require_rank(x, 3, "adaptive_avg_pool");
  if (bins == 0) throw ConfigError("adaptive_avg_pool: bins must be >= 1");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto lo = [](std::size_t i, std::size_t n, std::size_t b) { return (i * n) / b; };
  auto hi = [](std::size_t i, std::size_t n, std::size_t b) { return ((i + 1) * n + b - 1) / b; };
  Tensor<T> out(Shape{C, bins, bins});
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t by = 0; by < bins; ++by)
      for (std::size_t bx = 0; bx < bins; ++bx) {
        const std::size_t ya = lo(by, H, bins), yb = hi(by, H, bins);
        const std::size_t xa = lo(bx, W, bins), xb = hi(bx, W, bins);
        T acc = T(0);
        for (std::size_t y = ya; y < yb; ++y)
          for (std::size_t xx = xa; xx < xb; ++xx) acc += in[(c * H + y) * W + xx];
        o[(c * bins + by) * bins + bx] = acc / static_cast<T>((yb - ya) * (xb - xa));
      }
  detail::flops(static_cast<std::int64_t>(C * H * W));
  detail::record_op("adaptive_avg_pool", {x}, out, [x, C, H, W, bins, lo, hi](const Buffer<T>& g) {
    T* gx = detail::grad_sink(x);
    if (!gx) return;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t by = 0; by < bins; ++by)
        for (std::size_t bx = 0; bx < bins; ++bx) {
          const std::size_t ya = lo(by, H, bins), yb = hi(by, H, bins);
          const std::size_t xa = lo(bx, W, bins), xb = hi(bx, W, bins);
          const T share = g[(c * bins + by) * bins + bx] / static_cast<T>((yb - ya) * (xb - xa));
          for (std::size_t y = ya; y < yb; ++y)
            for (std::size_t xx = xa; xx < xb; ++xx) gx[(c * H + y) * W + xx] += share;
        }
  });
  return out;
}

// Nearest-neighbour resize of [C x h x w] to [C x H x W]; source index floor(dst*h/H).
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t H, std::size_t W) {
  detail::require_rank(x, 3, "upsample_nearest");
  const std::size_t C = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out(Shape{C, H, W});
  auto in = x.data();
  auto o = out.mutable_data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) o[(c * H + y) * W + xx] = in[(c * h + y * h / H) * w + xx * w / W];
  detail::record_op("upsample_nearest", {x}, out, [x, C, h, w, H, W](const Buffer<T>& g) {
    if (T* gx = detail::grad_sink(x))
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t xx = 0; xx < W; ++xx) gx[(c * h + y * h / H) * w + xx * w / W] += g[(c * H + y) * W + xx];
  });
  return out;
}

template <typename T>
struct CrossEntropyResult {
  Tensor<T> loss;           // scalar
  std::size_t counted = 0;  // non-ignored pixels
  bool all_ignored = false;
};

// Mean over non-ignored columns of -log softmax(logits[:, i])[label_i].
// logits: [K x N]; labels: N entries in [0, K) or ignore_index.
template <typename T>
CrossEntropyResult<T> cross_entropy_cols(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                                         std::int32_t ignore_index) {
  detail::require_rank(logits, 2, "cross_entropy_cols");
  const std::size_t K = logits.dim(0), N = logits.dim(1);
  if (labels.size() != N) {
    throw DimensionError("cross_entropy_cols: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
  }
  auto z = logits.data();
  std::vector<T> prob(K * N, T(0));
  std::size_t counted = 0;
  T total = T(0);
  for (std::size_t i = 0; i < N; ++i) {
    const std::int32_t l = labels[i];
    if (l == ignore_index) continue;
    if (l < 0 || static_cast<std::size_t>(l) >= K) {
      throw DataError("cross_entropy_cols: label " + std::to_string(l) + " outside [0, " + std::to_string(K) + ")");
    }
    T mx = z[i];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, z[k * N + i]);
    T s = T(0);
    for (std::size_t k = 0; k < K; ++k) {
      prob[k * N + i] = std::exp(z[k * N + i] - mx);
      s += prob[k * N + i];
    }
    for (std::size_t k = 0; k < K; ++k) prob[k * N + i] /= s;
    total += std::log(s) + mx - z[static_cast<std::size_t>(l) * N + i];
    ++counted;
  }
  CrossEntropyResult<T> res;
  res.counted = counted;
  res.all_ignored = counted == 0;
  res.loss = Tensor<T>::scalar(counted ? total / static_cast<T>(counted) : T(0));
  detail::flops(static_cast<std::int64_t>(5 * K * counted));
  if (counted == 0) return res;
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  detail::record_op("cross_entropy_cols", {logits}, res.loss,
                    [logits, prob = std::move(prob), lab = std::move(lab), K, N, counted,
                     ignore_index](const Buffer<T>& g) {
                      T* gl = detail::grad_sink(logits);
                      if (!gl) return;
                      const T s = g[0] / static_cast<T>(counted);
                      for (std::size_t i = 0; i < N; ++i) {
                        if (lab[i] == ignore_index) continue;
                        for (std::size_t k = 0; k < K; ++k) {
                          const T target = static_cast<std::size_t>(lab[i]) == k ? T(1) : T(0);
                          gl[k * N + i] += s * (prob[k * N + i] - target);
                        }
                      }
                    });
  return res;
}

// Treats a [C x H x W] feature map (or any [C x ...] tensor) as [C x N].
template <typename T>
Tensor<T> as_matrix(const Tensor<T>& x) {
  const std::size_t C = x.dim(0);
  return x.rank() == 2 ? x : reshape(x, Shape{C, x.numel() / C});
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace ocrseg
