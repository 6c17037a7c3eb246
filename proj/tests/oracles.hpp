#pragma once

// Brute-force reference implementations written directly from the
// definitions with plain loops over std::vector. They share no code with the
// library and are only used to check it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "ocrseg/tensor.hpp"

namespace oracle {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

// Row-major copy of a tensor viewed as [dim0 x rest].
template <typename T>
Mat from_tensor(const ocrseg::Tensor<T>& t) {
  Mat m(t.dim(0), t.numel() / t.dim(0));
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) m.v[i] = static_cast<double>(d[i]);
  return m;
}

inline Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline std::vector<double> softmax(const std::vector<double>& x, double temperature = 1.0) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  std::vector<double> e(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += e[i] = std::exp((x[i] - m) / temperature);
  for (auto& v : e) v /= z;
  return e;
}

inline Mat softmax_rows(const Mat& a, double temperature = 1.0) {
  Mat out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    std::vector<double> row(a.v.begin() + i * a.cols, a.v.begin() + (i + 1) * a.cols);
    auto s = softmax(row, temperature);
    std::copy(s.begin(), s.end(), out.v.begin() + i * a.cols);
  }
  return out;
}

// 1x1 conv -> BN (frozen statistics) -> ReLU, on a [C_in x N] matrix.
struct Block {
  Mat w;  // [C_out x C_in]
  std::vector<double> scale, shift, mean, var;
};

template <typename B>
Block block_from(const B& b) {
  Block o;
  o.w = from_tensor(b.weight);
  auto cp = [](const auto& t) {
    std::vector<double> v;
    for (auto x : t.data()) v.push_back(static_cast<double>(x));
    return v;
  };
  o.scale = cp(b.bn_scale);
  o.shift = cp(b.bn_shift);
  o.mean = cp(b.bn_mean);
  o.var = cp(b.bn_var);
  return o;
}

inline Mat transform(const Block& b, const Mat& x, double eps = 1e-5) {
  Mat out(b.w.rows, x.cols);
  for (std::size_t o = 0; o < b.w.rows; ++o)
    for (std::size_t n = 0; n < x.cols; ++n) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.rows; ++c) s += b.w(o, c) * x(c, n);
      const double bn = b.scale[o] * (s - b.mean[o]) / std::sqrt(b.var[o] + eps) + b.shift[o];
      out(o, n) = bn > 0.0 ? bn : 0.0;
    }
  return out;
}

// Zero-padded "same" dilated convolution. x: [C x H x W] flattened as
// [C x H*W]; w: [O x C x k x k] flattened.
inline Mat conv2d(const Mat& x, std::size_t H, std::size_t W, const std::vector<double>& w, std::size_t O,
                  std::size_t k, std::size_t rate) {
  const std::size_t C = x.rows;
  const long half = static_cast<long>(k / 2);
  Mat out(O, H * W);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long sy = static_cast<long>(y) + (static_cast<long>(ky) - half) * static_cast<long>(rate);
              const long sx = static_cast<long>(xx) + (static_cast<long>(kx) - half) * static_cast<long>(rate);
              if (sy < 0 || sx < 0 || sy >= static_cast<long>(H) || sx >= static_cast<long>(W)) continue;
              s += w[((o * C + c) * k + ky) * k + kx] * x(c, static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx));
            }
        out(o, y * W + xx) = s;
      }
  return out;
}

// Mean cross-entropy over non-ignored columns of [K x N] logits.
inline double cross_entropy(const Mat& logits, const std::vector<std::int32_t>& labels, std::int32_t ignore) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < logits.cols; ++i) {
    if (labels[i] == ignore) continue;
    double m = -1e300;
    for (std::size_t k = 0; k < logits.rows; ++k) m = std::max(m, logits(k, i));
    double z = 0.0;
    for (std::size_t k = 0; k < logits.rows; ++k) z += std::exp(logits(k, i) - m);
    total += -(logits(static_cast<std::size_t>(labels[i]), i) - m - std::log(z));
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) d = std::max(d, std::abs(a.v[i] - b.v[i]));
  return d;
}

template <typename T>
double max_abs_diff(const ocrseg::Tensor<T>& t, const Mat& m) {
  auto d = t.data();
  double out = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) out = std::max(out, std::abs(static_cast<double>(d[i]) - m.v[i]));
  return out;
}

// Frozen BN + ReLU applied per channel row of a pre-activation matrix.
inline Mat bn_relu(const Block& b, const Mat& pre, double eps = 1e-5) {
  Mat out(pre.rows, pre.cols);
  for (std::size_t o = 0; o < pre.rows; ++o)
    for (std::size_t n = 0; n < pre.cols; ++n) {
      const double v = b.scale[o] * (pre(o, n) - b.mean[o]) / std::sqrt(b.var[o] + eps) + b.shift[o];
      out(o, n) = v > 0.0 ? v : 0.0;
    }
  return out;
}

inline Mat stack_rows(const Mat& a, const Mat& b) {
  Mat out(a.rows + b.rows, a.cols);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<long>(a.v.size()));
  return out;
}

// f_k = sum_i m_ki x_i with m [K x N] and pixel columns x [C x N]; returns [K x C].
inline Mat region_reps(const Mat& m, const Mat& x) {
  Mat f(m.rows, x.rows);
  for (std::size_t k = 0; k < m.rows; ++k)
    for (std::size_t c = 0; c < x.rows; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < m.cols; ++i) s += m(k, i) * x(c, i);
      f(k, c) = s;
    }
  return f;
}

// Relation logits kappa(x_i, f_k) = scale * q_i . k_k with q [d x N], keys [d x K];
// softmax over k per pixel. Returns [N x K].
inline Mat relations(const Mat& q, const Mat& keys, double scale) {
  Mat w(q.cols, keys.cols);
  for (std::size_t i = 0; i < q.cols; ++i) {
    std::vector<double> row(keys.cols);
    for (std::size_t k = 0; k < keys.cols; ++k) {
      double s = 0.0;
      for (std::size_t d = 0; d < q.rows; ++d) s += q(d, i) * keys(d, k);
      row[k] = scale * s;
    }
    auto sm = softmax(row);
    for (std::size_t k = 0; k < keys.cols; ++k) w(i, k) = sm[k];
  }
  return w;
}

// sum_k w_ik v_k with w [N x K], values [d x K]; returns [d x N].
inline Mat aggregate(const Mat& w, const Mat& values) {
  Mat out(values.rows, w.rows);
  for (std::size_t i = 0; i < w.rows; ++i)
    for (std::size_t d = 0; d < values.rows; ++d) {
      double s = 0.0;
      for (std::size_t k = 0; k < w.cols; ++k) s += w(i, k) * values(d, k);
      out(d, i) = s;
    }
  return out;
}

struct OcrRef {
  Mat logits, normalized, reps, relations, y, z;
};

// Step-by-step OCR on pixel columns x [C x N] without the optional stem.
inline OcrRef ocr(const Mat& x, const Mat& classifier, const Block& phi, const Block& psi, const Block& delta,
                  const Block& rho, const Block& g, double scale) {
  OcrRef r;
  r.logits = matmul(classifier, x);
  r.normalized = softmax_rows(r.logits);
  r.reps = region_reps(r.normalized, x);
  const Mat fk = transpose(r.reps);
  r.relations = relations(transform(phi, x), transform(psi, fk), scale);
  r.y = transform(rho, aggregate(r.relations, transform(delta, fk)));
  r.z = transform(g, stack_rows(x, r.y));
  return r;
}

inline Mat self_attention(const Mat& x, const Block& phi, const Block& psi, const Block& delta, const Block& rho,
                          double scale) {
  const Mat q = transform(phi, x), k = transform(psi, x), v = transform(delta, x);
  const std::size_t N = x.cols;
  Mat ctx(v.rows, N);
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> logits(N);
    for (std::size_t s = 0; s < N; ++s) {
      double d = 0.0;
      for (std::size_t c = 0; c < q.rows; ++c) d += q(c, i) * k(c, s);
      logits[s] = scale * d;
    }
    auto w = softmax(logits);
    for (std::size_t c = 0; c < v.rows; ++c) {
      double acc = 0.0;
      for (std::size_t s = 0; s < N; ++s) acc += w[s] * v(c, s);
      ctx(c, i) = acc;
    }
  }
  return transform(rho, ctx);
}

inline Mat global_context(const Mat& x, const Block& delta, const Block& rho) {
  const Mat v = transform(delta, x);
  Mat m(v.rows, 1);
  for (std::size_t c = 0; c < v.rows; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.cols; ++i) s += v(c, i);
    m(c, 0) = s / static_cast<double>(v.cols);
  }
  const Mat y = transform(rho, m);
  Mat out(y.rows, x.cols);
  for (std::size_t c = 0; c < y.rows; ++c)
    for (std::size_t i = 0; i < x.cols; ++i) out(c, i) = y(c, 0);
  return out;
}

// Adaptive average pooling to b x b: cell (u, v) covers rows
// [floor(u H / b), ceil((u + 1) H / b)) and likewise for columns.
inline Mat adaptive_pool(const Mat& x, std::size_t H, std::size_t W, std::size_t b) {
  Mat out(x.rows, b * b);
  for (std::size_t c = 0; c < x.rows; ++c)
    for (std::size_t u = 0; u < b; ++u)
      for (std::size_t v = 0; v < b; ++v) {
        const std::size_t y0 = u * H / b, y1 = ((u + 1) * H + b - 1) / b;
        const std::size_t x0 = v * W / b, x1 = ((v + 1) * W + b - 1) / b;
        double s = 0.0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) s += x(c, y * W + xx);
        out(c, u * b + v) = s / static_cast<double>((y1 - y0) * (x1 - x0));
      }
  return out;
}

inline Mat upsample_nearest(const Mat& x, std::size_t h, std::size_t w, std::size_t H, std::size_t W) {
  Mat out(x.rows, H * W);
  for (std::size_t c = 0; c < x.rows; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) out(c, y * W + xx) = x(c, (y * h / H) * w + xx * w / W);
  return out;
}

}  // namespace oracle
