// Acceptance run: one PASS/FAIL line per headline criterion.
//
//   acceptance <path-to-ocr_cli> [criterion ...]
//
// With no criterion names every criterion runs. Exit status is 0 only when
// every selected criterion passes.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "ocrseg/checks.hpp"
#include "ocrseg/train.hpp"
#include "ocrseg/transformer_view.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ocrseg;
namespace fs = std::filesystem;
using testutil::random_block;
using testutil::random_tensor;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string fix(double v, int d = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", d, v);
  return buf;
}

// Worst violation of "non-negative rows summing to one".
double simplex_violation(const Tensor<double>& m) {
  const std::size_t R = m.dim(0), C = m.numel() / R;
  double worst = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double v = m[r * C + c];
      if (v < 0.0) worst = std::max(worst, -v);
      s += v;
    }
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

Outcome simplex_suite() {
  Rng rng(101);
  double worst = 0.0;
  std::size_t rows = 0;
  for (int n = 0; n < 1000; ++n) {
    OcrConfig cfg;
    cfg.num_classes = pick(rng, 1, 8);
    cfg.in_channels = pick(rng, 1, 6);
    cfg.key_channels = pick(rng, 1, 6);
    cfg.mid_channels = pick(rng, 1, 4);
    cfg.relation_scheme = static_cast<RelationScheme>(n % 3);
    cfg.attention_scale = n % 2 ? AttentionScale::unit : AttentionScale::inv_sqrt_d;
    const std::size_t H = pick(rng, 1, 16), W = pick(rng, 1, 16);
    auto p = OcrParams<double>::init(cfg, rng);
    randomize_batch_norm([&](auto&& f) { p.visit("", f); }, rng);
    const double spread = rng.uniform(0.5, 20.0);
    const auto x = random_tensor({cfg.in_channels, H, W}, rng, -spread, spread);
    const auto out = ocr_forward(x, p, cfg);
    for (const auto* m : {&out.regions.normalized, &out.context_regions.normalized, &out.relations.weights}) {
      worst = std::max(worst, simplex_violation(*m));
      rows += m->dim(0);
    }
    const auto phi = random_block(cfg.in_channels, cfg.key_channels, rng);
    const auto psi = random_block(cfg.in_channels, cfg.key_channels, rng);
    const auto sa = self_attention_relations(x, phi, psi, rng.uniform(0.1, 4.0));
    worst = std::max(worst, simplex_violation(sa.weights));
    rows += sa.weights.dim(0);
    const auto queries = random_tensor({cfg.num_classes, cfg.in_channels}, rng, -spread, spread);
    const auto dec = decoder_cross_attention(pixel_rows(x), QuerySet<double>{queries}, 1.0);
    worst = std::max(worst, simplex_violation(dec.attention));
    rows += dec.attention.dim(0);
  }
  return {worst <= 1e-9, std::to_string(rows) + " rows over 1000 instances, worst deviation " + sci(worst) +
                             " (tolerance 1e-9)"};
}

Outcome gradient_suite() {
  const ModuleKind kinds[] = {ModuleKind::ocr,       ModuleKind::da,      ModuleKind::acf,
                              ModuleKind::gt_ocr,    ModuleKind::self_attn, ModuleKind::global,
                              ModuleKind::aspp_lite, ModuleKind::ppm_lite};
  double worst = 0.0;
  std::string where;
  auto note = [&](const GradCheckResult& r, const std::string& what) {
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = what + " " + r.worst;
    }
  };
  for (std::uint64_t inst = 0; inst < 50; ++inst) {
    Rng rng(2000 + inst);
    // transform blocks on their own
    auto tb = random_block(3, 4, rng);
    auto cb = ConvBlock<double>::init(3, 2, 3, rng);
    randomize_batch_norm([&](auto&& f) { cb.visit("conv", f); }, rng);
    auto x = random_tensor({3, 3, 3}, rng);
    auto proj = random_tensor({4, 9}, rng);
    auto proj2 = random_tensor({2, 3, 3}, rng);
    note(check_gradients([&] { return sum(mul(transform_forward(tb, as_matrix(x)), proj)); },
                         {{"x", x}, {"w", tb.weight}, {"scale", tb.bn_scale}, {"shift", tb.bn_shift}}),
         "transform block");
    note(check_gradients([&] { return sum(mul(conv_block_forward(cb, x), proj2)); },
                         {{"x", x}, {"w", cb.weight}, {"scale", cb.bn_scale}, {"shift", cb.bn_shift}}),
         "conv block");
    for (auto k : kinds) note(model_grad_check(k, 3000 + inst), to_string(k));
  }
  return {worst < 1e-4, "50 instances x (2 blocks + 8 modules with loss), worst relative error " + sci(worst) + " at " +
                            where + " (tolerance 1e-4)"};
}

Outcome formulation_equivalence() {
  const EquivalenceSuite ok = equivalence_suite(100, 301, 1e-10);
  const EquivalenceSuite bad = equivalence_suite(100, 301, 1e-10, true);
  const bool mismatch_reported = bad.passed < bad.instances && bad.first_failure.find("scale mismatch") != std::string::npos;
  return {ok.passed == ok.instances && mismatch_reported,
          std::to_string(ok.passed) + "/100 agree, max discrepancy " + sci(ok.max_abs_discrepancy) +
              " (tolerance 1e-10); scale-mismatch case: " + std::to_string(bad.instances - bad.passed) +
              "/100 rejected, max discrepancy " + sci(bad.max_abs_discrepancy)};
}

Outcome oracle_equivalence() {
  Rng rng(401);
  double worst_atomic = 0.0, worst_composed = 0.0;
  std::string atomic_where, composed_where;
  auto atomic = [&](double d, const char* what) {
    if (d >= worst_atomic) {
      worst_atomic = d;
      atomic_where = what;
    }
  };
  auto composed = [&](double d, const char* what) {
    if (d >= worst_composed) {
      worst_composed = d;
      composed_where = what;
    }
  };
  for (int n = 0; n < 300; ++n) {
    const std::size_t K = pick(rng, 1, 4), C = pick(rng, 1, 4), D = pick(rng, 1, 4), M = pick(rng, 1, 4);
    const std::size_t H = pick(rng, 1, 4), W = pick(rng, 1, 4), N = H * W;
    const auto x = random_tensor({C, H, W}, rng);
    const auto xm = oracle::from_tensor(x);

    const auto tb = random_block(C, D, rng);
    atomic(oracle::max_abs_diff(transform_forward(tb, x), oracle::transform(oracle::block_from(tb), xm)), "transform");

    auto cb = ConvBlock<double>::init(C, D, 3, rng);
    randomize_batch_norm([&](auto&& f) { cb.visit("conv", f); }, rng);
    const std::vector<double> cw(cb.weight.data().begin(), cb.weight.data().end());
    atomic(oracle::max_abs_diff(conv_block_forward(cb, x),
                                oracle::bn_relu(oracle::block_from(cb), oracle::conv2d(xm, H, W, cw, D, 3, 1))),
           "conv block");

    const auto cls = random_tensor({K, C}, rng, -2.0, 2.0);
    const auto regions = compute_soft_regions(x, cls);
    const auto logits = oracle::matmul(oracle::from_tensor(cls), xm);
    atomic(oracle::max_abs_diff(regions.normalized, oracle::softmax_rows(logits)), "soft regions");
    const auto reps = region_representations(pixel_rows(x), regions);
    atomic(oracle::max_abs_diff(reps.reps, oracle::region_reps(oracle::softmax_rows(logits), xm)), "region reps");
    atomic(oracle::max_abs_diff(acf_scheme_relations(regions).weights, oracle::softmax_rows(oracle::transpose(logits))),
           "acf relations");
    const auto pred = random_tensor({K, C}, rng);
    atomic(oracle::max_abs_diff(da_scheme_relations(x, K, pred).weights,
                                oracle::softmax_rows(oracle::transpose(oracle::matmul(oracle::from_tensor(pred), xm)))),
           "da relations");

    const auto phi = random_block(C, D, rng), psi = random_block(C, D, rng);
    const double scale = rng.uniform(0.2, 2.0);
    atomic(oracle::max_abs_diff(
               pixel_region_relations(x, reps, phi, psi, scale).weights,
               oracle::relations(oracle::transform(oracle::block_from(phi), xm),
                                 oracle::transform(oracle::block_from(psi), oracle::transpose(oracle::from_tensor(reps.reps))), scale)),
           "ocr relations");

    const auto delta = random_block(C, D, rng), rho = random_block(D, M, rng);
    atomic(oracle::max_abs_diff(global_context(x, delta, rho),
                                oracle::global_context(xm, oracle::block_from(delta), oracle::block_from(rho))),
           "global context");

    const auto spec = DilatedConvSpec<double>::init(C, D, {1, 2}, rng);
    const auto aspp = aspp_lite(x, spec);
    for (std::size_t b = 0; b < 2; ++b) {
      const std::vector<double> w(spec.kernels[b].data().begin(), spec.kernels[b].data().end());
      const auto ref = oracle::conv2d(xm, H, W, w, D, 3, spec.rates[b]);
      double d = 0.0;
      for (std::size_t i = 0; i < ref.v.size(); ++i) d = std::max(d, std::abs(aspp[b * ref.v.size() + i] - ref.v[i]));
      atomic(d, "aspp branch");
    }

    const std::size_t bins_hi = std::min(H, W);
    std::vector<std::size_t> bins{1};
    if (bins_hi > 1) bins.push_back(pick(rng, 2, bins_hi));
    std::vector<Tensor<double>> convs;
    oracle::Mat ppm_ref = xm;
    for (auto b : bins) {
      convs.push_back(random_tensor({D, C}, rng));
      const auto branch = oracle::matmul(oracle::from_tensor(convs.back()), oracle::adaptive_pool(xm, H, W, b));
      ppm_ref = oracle::stack_rows(ppm_ref, oracle::upsample_nearest(branch, b, b, H, W));
    }
    atomic(oracle::max_abs_diff(ppm_lite(x, bins, convs), ppm_ref), "ppm");

    LabelMap labels{H, W, {}};
    for (std::size_t i = 0; i < N; ++i)
      labels.labels.push_back(rng.uniform() < 0.15 ? kIgnoreLabel : static_cast<std::int32_t>(pick(rng, 0, K - 1)));
    const auto lg = random_tensor({K, H, W}, rng, -3.0, 3.0);
    const auto ce = pixel_cross_entropy(lg, labels);
    if (!ce.all_ignored) {
      atomic(std::abs(ce.loss.item() - oracle::cross_entropy(oracle::from_tensor(lg), labels.labels, kIgnoreLabel)),
             "cross entropy");
    }

    // composed pipelines
    const auto sa_ref = oracle::self_attention(xm, oracle::block_from(phi), oracle::block_from(psi),
                                               oracle::block_from(delta), oracle::block_from(rho), scale);
    composed(oracle::max_abs_diff(self_attention_context(x, phi, psi, delta, rho, scale), sa_ref), "self attention");

    OcrConfig cfg;
    cfg.num_classes = K;
    cfg.in_channels = C;
    cfg.key_channels = D;
    cfg.mid_channels = M;
    cfg.attention_scale = n % 2 ? AttentionScale::unit : AttentionScale::inv_sqrt_d;
    auto p = OcrParams<double>::init(cfg, rng);
    randomize_batch_norm([&](auto&& f) { p.visit("", f); }, rng);
    const auto out = ocr_forward(x, p, cfg);
    const auto ref = oracle::ocr(xm, oracle::from_tensor(p.classifier), oracle::block_from(*p.phi),
                                 oracle::block_from(*p.psi), oracle::block_from(p.delta), oracle::block_from(p.rho),
                                 oracle::block_from(p.g), cfg.scale());
    composed(oracle::max_abs_diff(out.relations.weights, ref.relations), "ocr relations");
    composed(oracle::max_abs_diff(out.y, ref.y), "ocr y");
    composed(oracle::max_abs_diff(out.z, ref.z), "ocr z");
  }
  const bool ok = worst_atomic <= 1e-12 && worst_composed <= 1e-10;
  return {ok, "300 instances up to 4x4, K<=4: single ops worst " + sci(worst_atomic) + " (" + atomic_where +
                  ", tolerance 1e-12); pipelines worst " + sci(worst_composed) + " (" + composed_where +
                  ", tolerance 1e-10)"};
}

Outcome gt_ocr_oracle() {
  RunConfig base;
  const Dataset train = make_train_set(base);
  const Dataset eval = make_eval_set(base);
  RunConfig gt = base, learned = base;
  gt.module = ModuleKind::gt_ocr;
  learned.module = ModuleKind::ocr;
  TrainResult tg = train_model(gt, train);
  TrainResult tl = train_model(learned, train);
  const EvalResult eg = evaluate_model(tg.model, eval, gt);
  const EvalResult el = evaluate_model(tl.model, eval, learned);
  const bool ok = eg.pixel_accuracy >= 0.99 && eg.pixel_accuracy > el.pixel_accuracy && eg.mean_iou > el.mean_iou;
  return {ok, "gt_ocr pixel accuracy " + fix(eg.pixel_accuracy) + " (>= 0.99), mIoU " + fix(eg.mean_iou) +
                  "; learned ocr pixel accuracy " + fix(el.pixel_accuracy) + ", mIoU " + fix(el.mean_iou) + " after " +
                  std::to_string(base.iterations) + " iterations"};
}

Outcome table1_directions() {
  RunConfig cfg;
  const AblationResult r = run_ablation(cfg, make_train_set(cfg), make_eval_set(cfg));
  bool ok = true;
  std::string detail;
  for (const auto& v : r.verdicts) {
    ok = ok && v.passed;
    detail += (detail.empty() ? "" : "; ") + v.name + " " + (v.passed ? "holds" : "fails") + " on " + v.detail;
  }
  for (const auto& v : r.reported) detail += "; reported: " + v.name + " on " + v.detail;
  std::istringstream table(ablation_table_csv(r));
  std::string header, values;
  std::getline(table, header);
  std::getline(table, values);
  return {ok, detail + "; mean mIoU " + header + " = " + values};
}

Outcome table4_rank() {
  const FullShapeTable t = full_shape_table();
  bool ok = true;
  std::string detail;
  for (const auto& row : t.rows) {
    detail += row.module + " " + fix(static_cast<double>(row.flops) / 1e9, 2) + "G FLOPs, ";
  }
  for (const auto& v : t.verdicts) ok = ok && v.passed;
  BenchConfig bc;  // 1x256x64x64
  const BenchResult r = bench_report({"ocr", "self_attn", "double_attention"}, bc);
  const auto find = [&](const std::string& m) -> const CostReport& {
    for (const auto& c : r.reports)
      if (c.module == m) return c;
    throw ContractError("missing bench row " + m);
  };
  const CostReport& o = find("ocr");
  const CostReport& s = find("self_attn");
  const bool mem = o.ok && s.ok && o.peak_bytes < s.peak_bytes;
  const bool time = o.ok && s.ok && o.wall_ms < s.wall_ms;
  ok = ok && mem && time;
  detail += "at " + bc.input_shape().str() + ": peak memory ocr " + fix(o.peak_bytes / 1e6, 1) + "MB vs self_attn " +
            fix(s.peak_bytes / 1e6, 1) + "MB, median time ocr " + fix(o.wall_ms, 1) + "ms vs self_attn " +
            fix(s.wall_ms, 1) + "ms";
  for (const auto& v : t.verdicts)
    if (!v.passed) detail += "; failed: " + v.name;
  return {ok, detail};
}

Outcome scaling_laws() {
  const ScalingReport s = scaling_report({4096, 16384, 65536});
  const bool ok = s.ocr_quadratic_share < 0.01 && s.self_attn_quadratic_share > 0.9;
  return {ok, "quadratic-term share at N=65536: ocr " + sci(s.ocr_quadratic_share) + " (< 1%), self_attn " +
                  fix(s.self_attn_quadratic_share) + " (> 90%)"};
}

int run(const std::string& cmd) {
  return std::system((cmd + " > /dev/null 2>&1").c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome determinism(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / "ocrseg_acceptance_determinism";
  fs::remove_all(root);
  const std::string cfg =
      " --set grid=16 --set train_scenes=6 --set eval_scenes=3 --set iterations=20 --set ablate_seeds=2";
  // Both runs use the same relative paths from their own working directory,
  // so the recorded configs agree as well.
  const std::string cli_abs = fs::absolute(cli).string();
  for (const char* rep : {"a", "b"}) {
    const fs::path dir = root / rep;
    fs::create_directories(dir);
    const std::string common = "cd \"" + dir.string() + "\" && \"" + cli_abs + "\"" + cfg +
                               " --set data_dir=data --set out_dir=out";
    for (const char* sub : {" gen-data", " train", " eval", " ablate"}) {
      const int code = run(common + sub);
      if (code != 0 && std::string(sub) != " ablate") {
        return {false, std::string("run ") + rep + ":" + sub + " exited with " + std::to_string(code)};
      }
    }
    const int code = run(common + " bench --no-time --channel-divisor 16 --spatial-divisor 4");
    if (!fs::exists(dir / "out" / "bench.json")) {
      return {false, std::string("run ") + rep + ": bench wrote nothing (exit " + std::to_string(code) + ")"};
    }
  }
  std::size_t files = 0;
  std::vector<std::string> differing;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), root / "a");
    ++files;
    if (slurp(e.path()) != slurp(root / "b" / rel)) differing.push_back(rel.string());
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "b")) files_b += e.is_regular_file();
  const bool ok = differing.empty() && files == files_b && files > 0;
  std::string detail = std::to_string(files) + " files (data, checkpoint, logs, eval/ablation/bench CSV and JSON) ";
  detail += ok ? "byte-identical across two runs" : std::to_string(differing.size()) + " differ";
  if (!differing.empty()) detail += ", first " + differing.front();
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <path-to-ocr_cli> [criterion ...]\n";
    return 2;
  }
  const std::string cli = argv[1];
  std::set<std::string> only(argv + 2, argv + argc);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"simplex", simplex_suite},
      {"gradient", gradient_suite},
      {"formulation-equivalence", formulation_equivalence},
      {"oracle-equivalence", oracle_equivalence},
      {"gt-ocr", gt_ocr_oracle},
      {"supervision-and-relation-ablation", table1_directions},
      {"complexity-rank", table4_rank},
      {"scaling-laws", scaling_laws},
      {"determinism", [&] { return determinism(cli); }},
  };
  bool all = true;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.passed ? "PASS " : "FAIL ") << name << " [" << fix(secs, 1) << " s]: " << o.detail << std::endl;
    all = all && o.passed;
  }
  return all ? 0 : 1;
}
