#pragma once

// Parameter / FLOP accounting from an analytic op list, and measured peak
// memory and wall time of a real forward pass.
//
// The cost graph for a ModelConfig mirrors SegModel::context_forward op for
// op, so count_flops(graph) equals the engine's FlopScope reading for the
// same shape. Only the context head is costed; the final classifier is not.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ocrseg/model.hpp"

namespace ocrseg {

// One op of the cost graph. `dims` meaning per op:
//   conv1x1      {c_in, c_out, n, has_bias}
//   conv2d       {c_in, c_out, k, h, w}
//   matmul       {m, k, n}
//   batch_norm   {c, n}
//   relu         {numel}
//   softmax      {rows, cols}
//   mean_cols    {c, n}
//   avg_pool     {c, h, w}
//   concat, transpose, reshape, tile, upsample   {}   (free)
struct OpDesc {
  std::string op;
  std::vector<std::int64_t> dims;
  std::string label;  // which transform it belongs to, for diagnostics
};

using CostGraph = std::vector<OpDesc>;

// Feature-map shape fed to the context head.
struct InputShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t pixels() const { return height * width; }
  std::string str() const;  // "1xCxHxW"
};

// Throws ConfigError for gt_ocr (its regions come from labels, not the input).
CostGraph build_cost_graph(const ModelConfig& cfg, const InputShape& shape);

// Learnable scalars held by the graph's ops. Throws EnumerationError naming
// any op the cost model does not know.
std::int64_t count_params(const CostGraph& g);
std::int64_t count_flops(const CostGraph& g);

// Per-op-kind FLOP totals, for reports.
std::map<std::string, std::int64_t> flops_by_op(const CostGraph& g);

// Bench module names: ocr, self_attn, double_attention, global, aspp_lite, ppm_lite.
const std::vector<std::string>& bench_module_names();

// Context-head configuration for a bench module. Widths are the full-size ones
// (key 256, mid 512, stem 512, K 19, 64 double-attention regions) divided by
// `width_divisor`; spatial size only affects the ASPP rate scaling.
ModelConfig bench_module_config(const std::string& module, std::size_t in_channels, std::size_t image_size,
                                std::size_t width_divisor);

struct CostReport {
  std::string module;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  std::int64_t peak_bytes = 0;
  double wall_ms = 0.0;       // median
  double wall_ms_min = 0.0;   // dispersion
  double wall_ms_max = 0.0;
  std::string input_shape;
  bool ok = true;
  std::string error;
};

enum class Precision { float32, float64 };
const char* to_string(Precision p);
Precision parse_precision(const std::string& s);

struct BenchConfig {
  // Input is the full-size 1x2048x128x128 with channels divided by
  // channel_divisor and each spatial side by spatial_divisor.
  std::size_t channel_divisor = 8;
  std::size_t spatial_divisor = 2;
  std::size_t repeats = 5;
  std::size_t warmup = 2;
  Precision precision = Precision::float64;
  bool measure_time = true;
  std::uint64_t seed = 7;

  void validate() const;
  InputShape input_shape() const;
};

inline constexpr std::size_t kFullChannels = 2048;
inline constexpr std::size_t kFullSide = 128;

struct Verdict {
  std::string name;
  bool passed = true;
  bool vacuous = false;
  std::string detail;
};

struct BenchResult {
  BenchConfig config;
  std::vector<CostReport> reports;
  std::vector<Verdict> verdicts;
};

// Peak tracked bytes of one forward pass over `x` (input and parameters are
// allocated before the window opens and so are excluded).
template <typename T>
std::int64_t measure_peak_memory(const SegModel<T>& model, const Tensor<T>& x) {
  MemoryScope scope;
  { auto out = model.context_forward(x); }
  return tracked_alloc_stats().peak_bytes;
}

struct WallTime {
  double median_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
};

// Median of `repeats` forward passes after `warmup` untimed ones.
template <typename T>
WallTime measure_wall_time(const SegModel<T>& model, const Tensor<T>& x, std::size_t repeats, std::size_t warmup) {
  if (repeats < 5) throw ConfigError("wall time needs at least 5 timed runs");
  for (std::size_t i = 0; i < warmup; ++i) model.context_forward(x);
  std::vector<double> ms;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    { auto out = model.context_forward(x); }
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  const std::size_t n = ms.size();
  const double median = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  return {median, ms.front(), ms.back()};
}

// Builds, measures and compares the listed bench modules. A module that
// fails is reported with ok = false and the run continues.
BenchResult bench_report(const std::vector<std::string>& modules, const BenchConfig& cfg);

// Expected-direction verdicts over a set of reports. Comparisons involving a
// module that is absent or failed are vacuously true.
std::vector<Verdict> bench_verdicts(const std::vector<CostReport>& reports, bool timed);

std::string bench_csv(const std::vector<CostReport>& reports);
std::string bench_json(const BenchResult& r);

// Analytic params / FLOPs of the bench modules at the full-size input
// shape, plus rank-order verdicts.
struct FullShapeTable {
  std::vector<CostReport> rows;  // peak_bytes / wall_ms left at 0
  std::vector<Verdict> verdicts;
};
FullShapeTable full_shape_table();

// Least-squares quadratic fit f(N) = a N^2 + b N + c.
struct QuadraticFit {
  double a = 0.0, b = 0.0, c = 0.0;
  double max_rel_residual = 0.0;

  double operator()(double n) const { return (a * n + b) * n + c; }
  // Share of f(n) carried by the quadratic term.
  double quadratic_share(double n) const { return a * n * n / (*this)(n); }
};
QuadraticFit fit_quadratic(const std::vector<double>& n, const std::vector<double>& f);

struct ScalingReport {
  std::vector<std::size_t> pixels;
  std::vector<std::int64_t> ocr_flops, self_attn_flops;
  QuadraticFit ocr_fit, self_attn_fit;
  double ocr_quadratic_share = 0.0;        // at the largest N
  double self_attn_quadratic_share = 0.0;
};

// Context modules alone (no stem), full-size widths with 512 input channels,
// square maps with the given pixel counts.
ScalingReport scaling_report(const std::vector<std::size_t>& pixels = {4096, 16384, 65536});

}  // namespace ocrseg
