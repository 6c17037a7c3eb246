#include "ocrseg/profiler.hpp"

#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace ocrseg {

namespace {

using i64 = std::int64_t;

i64 as_i64(std::size_t v) { return static_cast<i64>(v); }

class GraphBuilder {
 public:
  void op(std::string name, std::vector<i64> dims, std::string label) {
    g_.push_back(OpDesc{std::move(name), std::move(dims), std::move(label)});
  }

  void transform(const std::string& label, std::size_t cin, std::size_t cout, std::size_t n) {
    op("conv1x1", {as_i64(cin), as_i64(cout), as_i64(n), 0}, label);
    op("batch_norm", {as_i64(cout), as_i64(n)}, label);
    op("relu", {as_i64(cout * n)}, label);
  }

  void conv_block(const std::string& label, std::size_t cin, std::size_t cout, std::size_t k, std::size_t h,
                  std::size_t w) {
    op("conv2d", {as_i64(cin), as_i64(cout), as_i64(k), as_i64(h), as_i64(w)}, label);
    op("batch_norm", {as_i64(cout), as_i64(h * w)}, label);
    op("relu", {as_i64(cout * h * w)}, label);
  }

  void soft_regions(const std::string& label, std::size_t K, std::size_t C, std::size_t N) {
    op("conv1x1", {as_i64(C), as_i64(K), as_i64(N), 0}, label);
    op("softmax", {as_i64(K), as_i64(N)}, label);
  }

  CostGraph take() { return std::move(g_); }

 private:
  CostGraph g_;
};

void require_dims(const OpDesc& o, std::size_t n) {
  if (o.dims.size() != n) {
    throw EnumerationError("cost graph op '" + o.op + "' (" + o.label + ") expects " + std::to_string(n) +
                           " dims, got " + std::to_string(o.dims.size()));
  }
}

struct OpCost {
  i64 params = 0;
  i64 flops = 0;
};

OpCost cost_of(const OpDesc& o) {
  const auto& d = o.dims;
  if (o.op == "conv1x1") {
    require_dims(o, 4);
    const i64 bias = d[3] ? d[1] : 0;
    return {d[0] * d[1] + bias, 2 * d[0] * d[1] * d[2] + (d[3] ? d[1] * d[2] : 0)};
  }
  if (o.op == "conv2d") {
    require_dims(o, 5);
    return {d[1] * d[0] * d[2] * d[2], 2 * d[1] * d[0] * d[2] * d[2] * d[3] * d[4]};
  }
  if (o.op == "matmul") {
    require_dims(o, 3);
    return {0, 2 * d[0] * d[1] * d[2]};
  }
  if (o.op == "batch_norm") {
    require_dims(o, 2);
    return {2 * d[0], 2 * d[0] * d[1]};
  }
  if (o.op == "relu") {
    require_dims(o, 1);
    return {0, d[0]};
  }
  if (o.op == "softmax") {
    require_dims(o, 2);
    return {0, 5 * d[0] * d[1]};
  }
  if (o.op == "mean_cols") {
    require_dims(o, 2);
    return {0, d[0] * d[1]};
  }
  if (o.op == "avg_pool") {
    require_dims(o, 3);
    return {0, d[0] * d[1] * d[2]};
  }
  if (o.op == "concat" || o.op == "transpose" || o.op == "reshape" || o.op == "tile" || o.op == "upsample") return {};
  throw EnumerationError("cost graph contains unsupported op '" + o.op + "' (" + o.label + ")");
}

}  // namespace

std::string InputShape::str() const {
  return "1x" + std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

CostGraph build_cost_graph(const ModelConfig& cfg, const InputShape& shape) {
  cfg.validate();
  if (shape.channels != cfg.in_channels) {
    throw DimensionError("cost graph: input has " + std::to_string(shape.channels) + " channels, config expects " +
                         std::to_string(cfg.in_channels));
  }
  if (shape.height == 0 || shape.width == 0) throw DimensionError("cost graph: empty spatial shape");
  const std::size_t C = cfg.in_channels, H = shape.height, W = shape.width, N = H * W;
  const std::size_t K = cfg.num_classes, d = cfg.key_channels, mid = cfg.mid_channels, cp = cfg.pixel_channels();
  GraphBuilder b;
  auto stem = [&] {
    if (cfg.stem_channels) b.conv_block("stem", C, cfg.stem_channels, 3, H, W);
  };
  switch (cfg.kind) {
    case ModuleKind::gt_ocr:
      throw ConfigError("cost graph: gt_ocr reads its regions from labels and is not profiled");
    case ModuleKind::ocr:
    case ModuleKind::da:
    case ModuleKind::acf: {
      b.soft_regions("regions", K, C, N);
      stem();
      std::size_t R = K;
      if (cfg.kind == ModuleKind::da && cfg.da_regions && cfg.da_regions != K) {
        R = cfg.da_regions;
        b.soft_regions("da_regions", R, C, N);
      }
      b.op("transpose", {}, "pixel_rows");
      b.op("matmul", {as_i64(R), as_i64(N), as_i64(cp)}, "region_reps");
      if (cfg.kind == ModuleKind::ocr) {
        b.transform("phi", cp, d, N);
        b.transform("psi", cp, d, R);
        b.op("matmul", {as_i64(N), as_i64(d), as_i64(R)}, "relations");
        b.op("softmax", {as_i64(N), as_i64(R)}, "relations");
      } else if (cfg.kind == ModuleKind::da) {
        b.op("conv1x1", {as_i64(cp), as_i64(R), as_i64(N), 0}, "da_predictor");
        b.op("softmax", {as_i64(N), as_i64(R)}, "relations");
      } else {
        b.op("softmax", {as_i64(N), as_i64(K)}, "relations");
      }
      b.transform("delta", cp, d, R);
      b.op("matmul", {as_i64(d), as_i64(R), as_i64(N)}, "aggregate");
      b.transform("rho", d, mid, N);
      b.op("concat", {}, "augment");
      b.transform("g", cp + mid, mid, N);
      break;
    }
    case ModuleKind::self_attn:
      stem();
      b.transform("phi", cp, d, N);
      b.transform("psi", cp, d, N);
      b.op("matmul", {as_i64(N), as_i64(d), as_i64(N)}, "relations");
      b.op("softmax", {as_i64(N), as_i64(N)}, "relations");
      b.transform("delta", cp, d, N);
      b.op("matmul", {as_i64(d), as_i64(N), as_i64(N)}, "aggregate");
      b.transform("rho", d, mid, N);
      b.op("concat", {}, "fuse");
      b.transform("fuse", cp + mid, mid, N);
      break;
    case ModuleKind::global:
      stem();
      b.transform("delta", cp, d, N);
      b.op("mean_cols", {as_i64(d), as_i64(N)}, "pool");
      b.transform("rho", d, mid, 1);
      b.op("tile", {}, "broadcast");
      b.op("concat", {}, "fuse");
      b.transform("fuse", cp + mid, mid, N);
      break;
    case ModuleKind::aspp_lite: {
      const std::size_t B = cfg.aspp_branch();
      for (std::size_t i = 0; i < cfg.aspp_rates.size(); ++i) {
        b.op("conv2d", {as_i64(C), as_i64(B), 3, as_i64(H), as_i64(W)}, "aspp.rate" + std::to_string(cfg.aspp_rates[i]));
      }
      b.op("concat", {}, "aspp");
      b.transform("fuse", B * cfg.aspp_rates.size(), mid, N);
      break;
    }
    case ModuleKind::ppm_lite: {
      const std::size_t B = cfg.ppm_branch();
      for (auto bin : cfg.ppm_bins) {
        const std::string label = "ppm.bin" + std::to_string(bin);
        b.op("avg_pool", {as_i64(C), as_i64(H), as_i64(W)}, label);
        b.op("conv1x1", {as_i64(C), as_i64(B), as_i64(bin * bin), 0}, label);
        b.op("upsample", {}, label);
      }
      b.op("concat", {}, "ppm");
      b.conv_block("bottleneck", C + B * cfg.ppm_bins.size(), mid, 3, H, W);
      break;
    }
  }
  return b.take();
}

std::int64_t count_params(const CostGraph& g) {
  i64 n = 0;
  for (const auto& o : g) n += cost_of(o).params;
  return n;
}

std::int64_t count_flops(const CostGraph& g) {
  i64 n = 0;
  for (const auto& o : g) n += cost_of(o).flops;
  return n;
}

std::map<std::string, std::int64_t> flops_by_op(const CostGraph& g) {
  std::map<std::string, std::int64_t> out;
  for (const auto& o : g) out[o.op] += cost_of(o).flops;
  return out;
}

const std::vector<std::string>& bench_module_names() {
  static const std::vector<std::string> names{"ocr", "self_attn", "double_attention", "global", "aspp_lite", "ppm_lite"};
  return names;
}

ModelConfig bench_module_config(const std::string& module, std::size_t in_channels, std::size_t image_size,
                                std::size_t width_divisor) {
  if (width_divisor < 1) throw ConfigError("bench: width divisor must be >= 1");
  auto scaled = [&](std::size_t w) { return std::max<std::size_t>(1, w / width_divisor); };
  ModelConfig c;
  c.num_classes = 19;
  c.in_channels = in_channels;
  c.key_channels = scaled(256);
  c.mid_channels = scaled(512);
  c.stem_channels = scaled(512);
  if (module == "ocr") {
    c.kind = ModuleKind::ocr;
  } else if (module == "self_attn") {
    c.kind = ModuleKind::self_attn;
  } else if (module == "double_attention") {
    c.kind = ModuleKind::da;
    c.da_regions = 64;
  } else if (module == "global") {
    c.kind = ModuleKind::global;
  } else if (module == "aspp_lite") {
    c.kind = ModuleKind::aspp_lite;
    c.stem_channels = 0;
    c.aspp_rates = scaled_aspp_rates(image_size).rates;
  } else if (module == "ppm_lite") {
    c.kind = ModuleKind::ppm_lite;
    c.stem_channels = 0;
    c.branch_channels = scaled(512);
  } else {
    throw ConfigError("unknown bench module '" + module +
                      "' (expected ocr, self_attn, double_attention, global, aspp_lite, ppm_lite)");
  }
  return c;
}

const char* to_string(Precision p) { return p == Precision::float32 ? "float" : "double"; }

Precision parse_precision(const std::string& s) {
  if (s == "float" || s == "float32") return Precision::float32;
  if (s == "double" || s == "float64") return Precision::float64;
  throw ConfigError("unknown precision '" + s + "' (expected float or double)");
}

void BenchConfig::validate() const {
  if (channel_divisor < 1 || spatial_divisor < 1) throw ConfigError("bench: divisors must be >= 1");
  if (kFullChannels % channel_divisor || kFullSide % spatial_divisor) {
    throw ConfigError("bench: divisors must divide the 2048x128x128 input");
  }
  if (repeats < 5) throw ConfigError("bench: repeats must be >= 5");
}

InputShape BenchConfig::input_shape() const {
  return {kFullChannels / channel_divisor, kFullSide / spatial_divisor, kFullSide / spatial_divisor};
}

namespace {

template <typename T>
void measure_module(CostReport& r, const ModelConfig& mc, const InputShape& shape, const BenchConfig& cfg) {
  Rng rng(cfg.seed);
  auto model = SegModel<T>::init(mc, rng);
  if (static_cast<i64>(model.context_param_count()) != r.params) {
    throw ContractError("analytic parameter count " + std::to_string(r.params) + " disagrees with the model's " +
                        std::to_string(model.context_param_count()));
  }
  Tensor<T> x(Shape{shape.channels, shape.height, shape.width});
  Rng in_rng(cfg.seed + 1);
  for (auto& v : x.mutable_data()) v = static_cast<T>(in_rng.uniform(-1.0, 1.0));
  r.peak_bytes = measure_peak_memory(model, x);
  if (cfg.measure_time) {
    const WallTime t = measure_wall_time(model, x, cfg.repeats, cfg.warmup);
    r.wall_ms = t.median_ms;
    r.wall_ms_min = t.min_ms;
    r.wall_ms_max = t.max_ms;
  }
}

const CostReport* find_ok(const std::vector<CostReport>& rs, const std::string& name) {
  for (const auto& r : rs)
    if (r.module == name && r.ok) return &r;
  return nullptr;
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

Verdict compare(const std::vector<CostReport>& rs, const std::string& name, const std::string& a, const std::string& b,
                double factor, bool strict, double CostReport::*field_d, std::int64_t CostReport::*field_i) {
  Verdict v{name, true, false, ""};
  const CostReport* ra = find_ok(rs, a);
  const CostReport* rb = find_ok(rs, b);
  if (!ra || !rb) {
    v.vacuous = true;
    v.detail = "not evaluated: " + std::string(!ra ? a : b) + " missing or failed";
    return v;
  }
  const double va = field_d ? ra->*field_d : static_cast<double>(ra->*field_i);
  const double vb = field_d ? rb->*field_d : static_cast<double>(rb->*field_i);
  v.passed = strict ? va < factor * vb : va <= factor * vb;
  v.detail = a + "=" + num(va) + " " + b + "=" + num(vb);
  return v;
}

}  // namespace

std::vector<Verdict> bench_verdicts(const std::vector<CostReport>& rs, bool timed) {
  std::vector<Verdict> out;
  out.push_back(compare(rs, "flops: ocr <= 1.1 x double_attention", "ocr", "double_attention", 1.1, false, nullptr,
                        &CostReport::flops));
  out.push_back(compare(rs, "memory: ocr < self_attn", "ocr", "self_attn", 1.0, true, nullptr, &CostReport::peak_bytes));
  out.push_back(compare(rs, "memory: ocr < ppm_lite", "ocr", "ppm_lite", 1.0, true, nullptr, &CostReport::peak_bytes));
  for (const char* other : {"self_attn", "ppm_lite"}) {
    const std::string name = std::string("time: ocr < ") + other;
    if (!timed) {
      out.push_back(Verdict{name, true, true, "not evaluated: timing disabled"});
    } else {
      out.push_back(compare(rs, name, "ocr", other, 1.0, true, &CostReport::wall_ms, nullptr));
    }
  }
  return out;
}

BenchResult bench_report(const std::vector<std::string>& modules, const BenchConfig& cfg) {
  cfg.validate();
  BenchResult res;
  res.config = cfg;
  const InputShape shape = cfg.input_shape();
  for (const auto& name : modules) {
    CostReport r;
    r.module = name;
    r.input_shape = shape.str();
    try {
      const ModelConfig mc = bench_module_config(name, shape.channels, shape.height, cfg.channel_divisor);
      const CostGraph g = build_cost_graph(mc, shape);
      r.params = count_params(g);
      r.flops = count_flops(g);
      if (cfg.precision == Precision::float32) {
        measure_module<float>(r, mc, shape, cfg);
      } else {
        measure_module<double>(r, mc, shape, cfg);
      }
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
    res.reports.push_back(std::move(r));
  }
  res.verdicts = bench_verdicts(res.reports, cfg.measure_time);
  return res;
}

std::string bench_csv(const std::vector<CostReport>& reports) {
  std::ostringstream os;
  os << "module,params,flops,peak_bytes,wall_ms,input_shape\n";
  for (const auto& r : reports) {
    os << r.module << ',' << r.params << ',' << r.flops << ',' << r.peak_bytes << ',' << std::fixed
       << std::setprecision(3) << r.wall_ms << std::defaultfloat << ',' << r.input_shape << '\n';
  }
  return os.str();
}

namespace {

nlohmann::ordered_json verdicts_json(const std::vector<Verdict>& vs) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& v : vs) {
    arr.push_back({{"name", v.name}, {"passed", v.passed}, {"vacuous", v.vacuous}, {"detail", v.detail}});
  }
  return arr;
}

}  // namespace

std::string bench_json(const BenchResult& r) {
  nlohmann::ordered_json j;
  j["input_shape"] = r.config.input_shape().str();
  j["precision"] = to_string(r.config.precision);
  j["repeats"] = r.config.repeats;
  j["warmup"] = r.config.warmup;
  j["timed"] = r.config.measure_time;
  j["seed"] = r.config.seed;
  auto reports = nlohmann::ordered_json::array();
  for (const auto& c : r.reports) {
    nlohmann::ordered_json row{{"module", c.module},         {"ok", c.ok},
                               {"params", c.params},         {"flops", c.flops},
                               {"peak_bytes", c.peak_bytes}, {"wall_ms", c.wall_ms},
                               {"wall_ms_min", c.wall_ms_min}, {"wall_ms_max", c.wall_ms_max},
                               {"input_shape", c.input_shape}};
    if (!c.ok) row["error"] = c.error;
    reports.push_back(row);
  }
  j["reports"] = reports;
  j["verdicts"] = verdicts_json(r.verdicts);
  const FullShapeTable t = full_shape_table();
  auto rows_j = nlohmann::ordered_json::array();
  for (const auto& c : t.rows) rows_j.push_back({{"module", c.module}, {"params", c.params}, {"flops", c.flops}});
  j["full_shape"] = {{"input_shape", InputShape{kFullChannels, kFullSide, kFullSide}.str()},
                     {"rows", rows_j},
                     {"verdicts", verdicts_json(t.verdicts)}};
  const ScalingReport s = scaling_report();
  j["scaling"] = {{"pixels", s.pixels},
                  {"ocr_flops", s.ocr_flops},
                  {"self_attn_flops", s.self_attn_flops},
                  {"ocr_quadratic_share", s.ocr_quadratic_share},
                  {"self_attn_quadratic_share", s.self_attn_quadratic_share}};
  return j.dump(2) + "\n";
}

FullShapeTable full_shape_table() {
  FullShapeTable t;
  const InputShape shape{kFullChannels, kFullSide, kFullSide};
  for (const auto& name : {"double_attention", "ocr", "self_attn", "ppm_lite"}) {
    CostReport r;
    r.module = name;
    r.input_shape = shape.str();
    const CostGraph g = build_cost_graph(bench_module_config(name, shape.channels, shape.height, 1), shape);
    r.params = count_params(g);
    r.flops = count_flops(g);
    t.rows.push_back(r);
  }
  auto flops = [&](const std::string& n) {
    for (const auto& r : t.rows)
      if (r.module == n) return static_cast<double>(r.flops);
    return 0.0;
  };
  const double da = flops("double_attention"), ocr = flops("ocr"), sa = flops("self_attn"), ppm = flops("ppm_lite");
  auto g = [](double v) { return num(v / 1e9) + "G"; };
  t.verdicts.push_back({"full shape: ocr within 10% of double_attention", std::abs(ocr - da) <= 0.1 * da, false,
                        "ocr=" + g(ocr) + " double_attention=" + g(da)});
  t.verdicts.push_back({"full shape: ocr < self_attn", ocr < sa, false, "ocr=" + g(ocr) + " self_attn=" + g(sa)});
  t.verdicts.push_back({"full shape: double_attention < self_attn", da < sa, false,
                        "double_attention=" + g(da) + " self_attn=" + g(sa)});
  t.verdicts.push_back({"full shape: ocr < ppm_lite", ocr < ppm, false, "ocr=" + g(ocr) + " ppm_lite=" + g(ppm)});
  return t;
}

QuadraticFit fit_quadratic(const std::vector<double>& n, const std::vector<double>& f) {
  if (n.size() != f.size() || n.size() < 3) throw ConfigError("quadratic fit needs at least 3 points");
  const double scale = *std::max_element(n.begin(), n.end());
  // Normal equations in s = n / scale for conditioning.
  std::array<std::array<double, 4>, 3> m{};
  for (std::size_t i = 0; i < n.size(); ++i) {
    const double s = n[i] / scale;
    const double basis[3] = {s * s, s, 1.0};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r][c] += basis[r] * basis[c];
      m[r][3] += basis[r] * f[i];
    }
  }
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    std::swap(m[col], m[piv]);
    if (m[col][col] == 0.0) throw ConfigError("quadratic fit: degenerate sample points");
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double factor = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= factor * m[col][c];
    }
  }
  QuadraticFit fit;
  fit.a = m[0][3] / m[0][0] / (scale * scale);
  fit.b = m[1][3] / m[1][1] / scale;
  fit.c = m[2][3] / m[2][2];
  for (std::size_t i = 0; i < n.size(); ++i) {
    fit.max_rel_residual = std::max(fit.max_rel_residual, std::abs(fit(n[i]) - f[i]) / std::abs(f[i]));
  }
  return fit;
}

ScalingReport scaling_report(const std::vector<std::size_t>& pixels) {
  ScalingReport s;
  s.pixels = pixels;
  std::vector<double> ns, fo, fs;
  for (auto n : pixels) {
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (side * side != n) throw ConfigError("scaling report: pixel counts must be perfect squares");
    const InputShape shape{512, side, side};
    ModelConfig ocr = bench_module_config("ocr", 512, side, 1);
    ModelConfig sa = bench_module_config("self_attn", 512, side, 1);
    ocr.stem_channels = 0;
    sa.stem_channels = 0;
    s.ocr_flops.push_back(count_flops(build_cost_graph(ocr, shape)));
    s.self_attn_flops.push_back(count_flops(build_cost_graph(sa, shape)));
    ns.push_back(static_cast<double>(n));
    fo.push_back(static_cast<double>(s.ocr_flops.back()));
    fs.push_back(static_cast<double>(s.self_attn_flops.back()));
  }
  s.ocr_fit = fit_quadratic(ns, fo);
  s.self_attn_fit = fit_quadratic(ns, fs);
  s.ocr_quadratic_share = std::abs(s.ocr_fit.quadratic_share(ns.back()));
  s.self_attn_quadratic_share = s.self_attn_fit.quadratic_share(ns.back());
  return s;
}

}  // namespace ocrseg
