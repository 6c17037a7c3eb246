#include <doctest.h>

#include <cmath>

#include "ocrseg/profiler.hpp"
#include "test_util.hpp"

using namespace ocrseg;
using testutil::random_tensor;

TEST_CASE("closed-form counts") {
  CostGraph conv{{"conv1x1", {2048, 256, 128 * 128, 1}, "head"}};
  CHECK(count_params(conv) == 524544);
  CostGraph nobias{{"conv1x1", {2048, 256, 128 * 128, 0}, "head"}};
  CHECK(count_flops(nobias) == 2LL * 2048 * 256 * 16384);
  CHECK(static_cast<double>(count_flops(nobias)) == doctest::Approx(1.718e10).epsilon(1e-3));
  CHECK(count_params(CostGraph{}) == 0);
  CHECK(count_flops(CostGraph{}) == 0);
}

TEST_CASE("unknown ops are named in the error") {
  CostGraph g{{"conv1x1", {4, 4, 4, 0}, "a"}, {"layer_norm", {4, 4}, "mystery"}};
  try {
    count_flops(g);
    FAIL("expected EnumerationError");
  } catch (const EnumerationError& e) {
    CHECK(std::string(e.what()).find("layer_norm") != std::string::npos);
  }
  CHECK_THROWS_AS(count_params(g), EnumerationError);
}

TEST_CASE("analytic counts equal the engine's counts") {
  const InputShape shape{6, 7, 5};
  for (const auto& name : bench_module_names()) {
    CAPTURE(name);
    ModelConfig mc = bench_module_config(name, shape.channels, shape.height, 64);
    mc.num_classes = 3;
    if (mc.kind == ModuleKind::da) mc.da_regions = 4;
    if (mc.kind == ModuleKind::ppm_lite) mc.ppm_bins = {1, 2, 3};
    if (mc.kind == ModuleKind::aspp_lite) mc.aspp_rates = {1, 2};
    Rng rng(3);
    auto model = SegModel<double>::init(mc, rng);
    const CostGraph g = build_cost_graph(mc, shape);
    CHECK(static_cast<std::int64_t>(model.context_param_count()) == count_params(g));
    auto x = random_tensor({shape.channels, shape.height, shape.width}, rng);
    FlopScope fs;
    model.context_forward(x);
    CHECK(fs.flops() == count_flops(g));
  }
  SUBCASE("acf and da with K regions") {
    for (auto kind : {ModuleKind::acf, ModuleKind::da}) {
      ModelConfig mc;
      mc.kind = kind;
      mc.in_channels = 4;
      mc.stem_channels = 3;
      Rng rng(4);
      auto model = SegModel<double>::init(mc, rng);
      const CostGraph g = build_cost_graph(mc, InputShape{4, 3, 3});
      CHECK(static_cast<std::int64_t>(model.context_param_count()) == count_params(g));
      FlopScope fs;
      model.context_forward(random_tensor({4, 3, 3}, rng));
      CHECK(fs.flops() == count_flops(g));
    }
  }
  CHECK_THROWS_AS(build_cost_graph(ModelConfig{.kind = ModuleKind::gt_ocr}, InputShape{18, 4, 4}), ConfigError);
  CHECK_THROWS_AS(build_cost_graph(ModelConfig{}, InputShape{5, 4, 4}), DimensionError);
}

TEST_CASE("counts are additive over composition") {
  const InputShape shape{16, 8, 8};
  const ModelConfig mc = bench_module_config("ocr", 16, 8, 32);
  CostGraph g = build_cost_graph(mc, shape);
  CostGraph head(g.begin(), g.begin() + 5), tail(g.begin() + 5, g.end());
  CHECK(count_flops(g) == count_flops(head) + count_flops(tail));
  CHECK(count_params(g) == count_params(head) + count_params(tail));
}

TEST_CASE("full-shape parameters and FLOP ranking") {
  const auto t = full_shape_table();
  for (const auto& r : t.rows) {
    if (r.module == "ocr") CHECK(std::abs(static_cast<double>(r.params) - 10.5e6) <= 0.15 * 10.5e6);
    if (r.module == "ppm_lite") CHECK(std::abs(static_cast<double>(r.params) - 23.1e6) <= 0.15 * 23.1e6);
  }
  for (const auto& v : t.verdicts) {
    INFO(v.name << ": " << v.detail);
    CHECK(v.passed);
  }
}

TEST_CASE("self-attention pixel-pair terms scale by 16 when N quadruples") {
  auto pair_flops = [](std::size_t side) {
    ModelConfig mc = bench_module_config("self_attn", 32, side, 16);
    std::int64_t total = 0;
    for (const auto& o : build_cost_graph(mc, InputShape{32, side, side})) {
      if ((o.op == "matmul" || o.op == "softmax") && (o.dims.back() == static_cast<std::int64_t>(side * side)))
        total += count_flops(CostGraph{o});
    }
    return static_cast<double>(total);
  };
  CHECK(pair_flops(32) / pair_flops(16) == doctest::Approx(16.0));
}

TEST_CASE("quadratic fit and scaling shares") {
  const std::vector<double> n{4, 16, 64, 256};
  std::vector<double> f;
  for (double v : n) f.push_back(3.0 * v * v + 5.0 * v + 7.0);
  const auto fit = fit_quadratic(n, f);
  CHECK(fit.a == doctest::Approx(3.0));
  CHECK(fit.b == doctest::Approx(5.0));
  CHECK(fit.c == doctest::Approx(7.0));
  CHECK(fit.max_rel_residual < 1e-9);
  CHECK_THROWS_AS(fit_quadratic({1, 2}, {1, 2}), ConfigError);

  const auto s = scaling_report();
  CHECK(s.ocr_quadratic_share < 0.01);
  CHECK(s.self_attn_quadratic_share > 0.9);
  CHECK(s.ocr_fit.max_rel_residual < 0.01);
  CHECK(s.self_attn_fit.max_rel_residual < 0.01);
  // exactly linear: equal increments per added pixel
  const double slope1 = static_cast<double>(s.ocr_flops[1] - s.ocr_flops[0]) / (16384.0 - 4096.0);
  const double slope2 = static_cast<double>(s.ocr_flops[2] - s.ocr_flops[1]) / (65536.0 - 16384.0);
  CHECK(slope1 == doctest::Approx(slope2).epsilon(1e-12));
}

TEST_CASE("peak memory") {
  Rng rng(5);
  auto x = random_tensor({16, 16, 16}, rng);
  auto make = [&](const std::string& name) {
    Rng r(6);
    return SegModel<double>::init(bench_module_config(name, 16, 16, 32), r);
  };
  auto sa = make("self_attn"), glob = make("global"), ocr = make("ocr");
  const auto p_sa = measure_peak_memory(sa, x);
  const auto p_glob = measure_peak_memory(glob, x);
  const auto p_ocr = measure_peak_memory(ocr, x);
  CHECK(p_glob > 0);
  CHECK(p_glob < p_sa);
  CHECK(p_ocr < p_sa);
  CHECK(p_sa >= static_cast<std::int64_t>(256 * 256 * sizeof(double)));
  CHECK(measure_peak_memory(sa, x) == p_sa);
  CHECK(measure_peak_memory(ocr, x) == p_ocr);
}

TEST_CASE("wall time needs enough repeats") {
  Rng rng(7);
  auto m = SegModel<double>::init(bench_module_config("global", 8, 4, 64), rng);
  auto x = random_tensor({8, 4, 4}, rng);
  CHECK_THROWS_AS(measure_wall_time(m, x, 4, 2), ConfigError);
  const auto t = measure_wall_time(m, x, 5, 2);
  CHECK(t.min_ms <= t.median_ms);
  CHECK(t.median_ms <= t.max_ms);
}

TEST_CASE("bench report") {
  BenchConfig cfg;
  cfg.channel_divisor = 64;
  cfg.spatial_divisor = 16;
  cfg.measure_time = false;
  SUBCASE("single module: one report, vacuous verdicts") {
    auto r = bench_report({"ocr"}, cfg);
    REQUIRE(r.reports.size() == 1);
    CHECK(r.reports[0].ok);
    CHECK(r.reports[0].input_shape == "1x32x8x8");
    for (const auto& v : r.verdicts) {
      CHECK(v.passed);
      CHECK(v.vacuous);
    }
  }
  SUBCASE("a failing module is isolated") {
    auto r = bench_report({"ocr", "nonlocal_plus", "self_attn"}, cfg);
    REQUIRE(r.reports.size() == 3);
    CHECK(r.reports[0].ok);
    CHECK_FALSE(r.reports[1].ok);
    CHECK(r.reports[1].error.find("nonlocal_plus") != std::string::npos);
    CHECK(r.reports[2].ok);
  }
  SUBCASE("csv and json") {
    auto r = bench_report({"ocr", "self_attn"}, cfg);
    const std::string csv = bench_csv(r.reports);
    CHECK(csv.rfind("module,params,flops,peak_bytes,wall_ms,input_shape\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.find("\r") == std::string::npos);
    const std::string json = bench_json(r);
    CHECK(json.find("\"timed\": false") != std::string::npos);
    CHECK(json == bench_json(r));
  }
  SUBCASE("config validation") {
    BenchConfig bad = cfg;
    bad.repeats = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.channel_divisor = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}
