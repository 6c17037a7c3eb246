#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <type_traits>

#include "ocrseg/ops.hpp"
#include "ocrseg/rng.hpp"

namespace ocrseg {

inline constexpr double kBatchNormEps = 1e-5;

// Uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)].
template <typename T>
Tensor<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Tensor<T> identity_matrix(std::size_t n) {
  Tensor<T> t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = T(1);
  return t;
}

// Per-pixel affine map. x: [C_in x H x W] or [C_in x N]; w: [C_out x C_in];
// bias: optional [C_out]. Output keeps x's spatial layout.
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w,
                  const std::type_identity_t<std::optional<Tensor<T>>>& bias = std::nullopt) {
  if (w.rank() != 2) throw DimensionError("conv1x1: weight must be [C_out x C_in], got " + shape_str(w.shape()));
  if (x.rank() < 2 || w.dim(1) != x.dim(0)) {
    throw DimensionError("conv1x1: weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
  }
  Tensor<T> y = matmul(w, as_matrix(x));
  if (bias) y = add_channel_bias(y, *bias);
  if (x.rank() == 2) return y;
  Shape shape = x.shape();
  shape[0] = w.dim(0);
  return reshape(y, shape);
}

// 1x1 conv -> frozen BN -> ReLU. Used for every learned transform of the
// context heads (phi, psi, delta, rho, g and the fusion blocks).
template <typename T>
struct TransformBlock {
  Tensor<T> weight;    // [C_out x C_in]
  Tensor<T> bn_scale;  // [C_out]
  Tensor<T> bn_shift;
  Tensor<T> bn_mean;   // frozen
  Tensor<T> bn_var;    // frozen, >= 0

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  static TransformBlock init(std::size_t c_in, std::size_t c_out, Rng& rng) {
    TransformBlock b;
    b.weight = init_uniform<T>(Shape{c_out, c_in}, c_in, rng);
    b.bn_scale = Tensor<T>(Shape{c_out}, T(1));
    b.bn_shift = Tensor<T>(Shape{c_out}, T(0));
    b.bn_mean = Tensor<T>(Shape{c_out}, T(0));
    b.bn_var = Tensor<T>(Shape{c_out}, T(1));
    return b;
  }

  // W = I with BN that is exactly neutral: var = 1 - eps so sqrt(var + eps) = 1.
  static TransformBlock identity(std::size_t c) { return from_weight(identity_matrix<T>(c)); }

  static TransformBlock from_weight(Tensor<T> w) {
    TransformBlock b;
    const std::size_t c_out = w.dim(0);
    b.weight = std::move(w);
    b.bn_scale = Tensor<T>(Shape{c_out}, T(1));
    b.bn_shift = Tensor<T>(Shape{c_out}, T(0));
    b.bn_mean = Tensor<T>(Shape{c_out}, T(0));
    b.bn_var = Tensor<T>(Shape{c_out}, T(1) - static_cast<T>(kBatchNormEps));
    return b;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight, true);
    f(prefix + ".bn_scale", bn_scale, true);
    f(prefix + ".bn_shift", bn_shift, true);
    f(prefix + ".bn_mean", bn_mean, false);
    f(prefix + ".bn_var", bn_var, false);
  }
};

template <typename T>
Tensor<T> transform_forward(const TransformBlock<T>& block, const Tensor<T>& x) {
  Tensor<T> h = conv1x1(x, block.weight);
  h = frozen_batch_norm(h, block.bn_scale, block.bn_shift, block.bn_mean, block.bn_var,
                        static_cast<T>(kBatchNormEps));
  return relu(h);
}

// k x k conv (dilation 1) -> frozen BN -> ReLU; stands in for the 3x3
// convolution that feeds pixel features to the context head.
template <typename T>
struct ConvBlock {
  Tensor<T> weight;  // [C_out x C_in x k x k]
  Tensor<T> bn_scale;
  Tensor<T> bn_shift;
  Tensor<T> bn_mean;
  Tensor<T> bn_var;

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel() const { return weight.dim(2); }

  static ConvBlock init(std::size_t c_in, std::size_t c_out, std::size_t k, Rng& rng) {
    ConvBlock b;
    b.weight = init_uniform<T>(Shape{c_out, c_in, k, k}, c_in * k * k, rng);
    b.bn_scale = Tensor<T>(Shape{c_out}, T(1));
    b.bn_shift = Tensor<T>(Shape{c_out}, T(0));
    b.bn_mean = Tensor<T>(Shape{c_out}, T(0));
    b.bn_var = Tensor<T>(Shape{c_out}, T(1));
    return b;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight, true);
    f(prefix + ".bn_scale", bn_scale, true);
    f(prefix + ".bn_shift", bn_shift, true);
    f(prefix + ".bn_mean", bn_mean, false);
    f(prefix + ".bn_var", bn_var, false);
  }
};

template <typename T>
Tensor<T> conv_block_forward(const ConvBlock<T>& block, const Tensor<T>& x) {
  Tensor<T> h = conv2d(x, block.weight, 1);
  h = frozen_batch_norm(h, block.bn_scale, block.bn_shift, block.bn_mean, block.bn_var,
                        static_cast<T>(kBatchNormEps));
  return relu(h);
}

}  // namespace ocrseg
