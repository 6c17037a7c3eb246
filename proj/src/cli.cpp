#include "ocrseg/cli.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "ocrseg/checks.hpp"
#include "ocrseg/train.hpp"

namespace ocrseg {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheck = 1;
constexpr int kExitUsage = 2;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

void print_verdicts(std::ostream& out, const std::vector<Verdict>& vs, bool& all_passed) {
  for (const auto& v : vs) {
    out << (v.passed ? "PASS " : "FAIL ") << v.name << (v.vacuous ? " (vacuous)" : "") << ": " << v.detail << "\n";
    all_passed = all_passed && v.passed;
  }
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Object-contextual segmentation toolkit: synthetic data, toy training and complexity checks"};
  app.name("ocr_cli");
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "flat key=value config file");
  app.add_option("--set", overrides, "override one config key (key=value); repeatable");

  auto* gen = app.add_subcommand("gen-data", "write train/eval scenes to data_dir as PPM/PGM pairs");
  auto* train = app.add_subcommand("train", "train on data_dir; writes checkpoint, loss log and config to out_dir");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the eval split of data_dir");
  std::string checkpoint_path;
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint JSON (default <out_dir>/checkpoint.json)");

  auto* bench = app.add_subcommand("bench", "params, FLOPs, peak memory and wall time of the context modules");
  BenchConfig bc;
  std::vector<std::string> bench_modules = bench_module_names();
  std::string precision = "double";
  bool no_time = false;
  bench->add_option("--modules", bench_modules, "modules to measure")->check(CLI::IsMember(bench_module_names()));
  bench->add_option("--channel-divisor", bc.channel_divisor, "divide the 2048 input channels and head widths by this");
  bench->add_option("--spatial-divisor", bc.spatial_divisor, "divide the 128x128 input side by this");
  bench->add_option("--repeats", bc.repeats, "timed runs per module (>= 5)");
  bench->add_option("--warmup", bc.warmup, "untimed runs before timing");
  bench->add_option("--precision", precision, "float or double")->check(CLI::IsMember({"float", "double"}));
  bench->add_flag("--no-time", no_time, "skip wall-time measurement (reports 0 ms, keeps output deterministic)");

  auto* ablate = app.add_subcommand("ablate", "aux supervision on/off x relation scheme {ocr, da, acf} over seeds");

  auto* equiv = app.add_subcommand("equiv-check", "transformer-path vs OCR-path contextual representations");
  std::size_t equiv_instances = 1;
  double equiv_tol = 1e-10;
  bool mismatch = false;
  equiv->add_option("--instances", equiv_instances, "number of seeded random instances");
  equiv->add_option("--tolerance", equiv_tol, "max absolute discrepancy");
  equiv->add_flag("--mismatch", mismatch, "use a different attention scale on the transformer side");

  auto* grad = app.add_subcommand("grad-check", "finite-difference check of the training loss gradients");
  std::string grad_module;
  double grad_threshold = 1e-4;
  std::size_t grad_instances = 1;
  grad->add_option("--module", grad_module, "module to check (default: the configured module)");
  grad->add_option("--threshold", grad_threshold, "max relative error");
  grad->add_option("--instances", grad_instances, "number of seeded instances");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  RunConfig cfg;
  try {
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& o : overrides) cfg.apply_override(o);
    cfg.validate();
    bc.precision = parse_precision(precision);
    bc.measure_time = !no_time;
    bc.seed = cfg.seed;
    if (*bench) bc.validate();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  const std::filesystem::path data_dir(cfg.data_dir), out_dir(cfg.out_dir);
  try {
    if (*gen) {
      write_dataset(data_dir, "train", make_train_set(cfg));
      write_dataset(data_dir, "eval", make_eval_set(cfg));
      write_text(data_dir / "config.txt", cfg.to_text());
      out << "wrote " << cfg.train_scenes << " train and " << cfg.eval_scenes << " eval scenes to " << data_dir.string()
          << "\n";
      return kExitOk;
    }
    if (*train) {
      TrainResult t = train_model(cfg, read_dataset(data_dir, "train"));
      write_text(out_dir / "checkpoint.json", checkpoint_json(cfg, t.model));
      write_text(out_dir / "train_log.csv", train_log_csv(t.log));
      write_text(out_dir / "config.txt", cfg.to_text());
      if (!t.log.empty()) out << "final loss " << t.log.back().loss << " after " << t.log.size() << " iterations\n";
      out << "wrote " << (out_dir / "checkpoint.json").string() << "\n";
      return kExitOk;
    }
    if (*eval) {
      const std::filesystem::path ck = checkpoint_path.empty() ? out_dir / "checkpoint.json" : std::filesystem::path(checkpoint_path);
      Checkpoint c = load_checkpoint(read_text(ck));
      const EvalResult r = evaluate_model(c.model, read_dataset(data_dir, "eval"), c.config);
      write_text(out_dir / "eval.json", eval_json(r));
      out << "pixel_accuracy " << r.pixel_accuracy << "\nmean_iou " << r.mean_iou << "\n";
      return kExitOk;
    }
    if (*bench) {
      BenchResult r = bench_report(bench_modules, bc);
      write_text(out_dir / "bench.csv", bench_csv(r.reports));
      write_text(out_dir / "bench.json", bench_json(r));
      out << bench_csv(r.reports);
      bool ok = true;
      for (const auto& rep : r.reports) {
        if (!rep.ok) {
          out << "FAIL " << rep.module << ": " << rep.error << "\n";
          ok = false;
        }
      }
      print_verdicts(out, r.verdicts, ok);
      print_verdicts(out, full_shape_table().verdicts, ok);
      const ScalingReport s = scaling_report();
      const bool lin = s.ocr_quadratic_share < 0.01, quad = s.self_attn_quadratic_share > 0.9;
      out << (lin ? "PASS" : "FAIL") << " scaling: ocr quadratic share " << sci(s.ocr_quadratic_share) << " < 1%\n";
      out << (quad ? "PASS" : "FAIL") << " scaling: self_attn quadratic share " << s.self_attn_quadratic_share
          << " > 90%\n";
      return ok && lin && quad ? kExitOk : kExitCheck;
    }
    if (*ablate) {
      AblationResult r = run_ablation(cfg, read_dataset(data_dir, "train"), read_dataset(data_dir, "eval"));
      write_text(out_dir / "ablation.csv", ablation_csv(r));
      write_text(out_dir / "ablation_table.csv", ablation_table_csv(r));
      write_text(out_dir / "ablation.json", ablation_json(r));
      out << ablation_table_csv(r);
      bool ok = true;
      print_verdicts(out, r.verdicts, ok);
      for (const auto& v : r.reported) out << "INFO " << v.name << ": " << v.detail << "\n";
      return ok ? kExitOk : kExitCheck;
    }
    if (*equiv) {
      const EquivalenceSuite s = equivalence_suite(equiv_instances, cfg.seed, equiv_tol, mismatch);
      out << "max discrepancy " << sci(s.max_abs_discrepancy) << " over " << s.instances << " instances ("
          << s.passed << " within " << sci(equiv_tol) << ")\n";
      if (!s.first_failure.empty()) out << s.first_failure << "\n";
      return s.passed == s.instances ? kExitOk : kExitCheck;
    }
    if (*grad) {
      const ModuleKind kind = grad_module.empty() ? cfg.effective_module() : parse_module_kind(grad_module);
      double worst = 0.0;
      std::string where;
      for (std::size_t i = 0; i < grad_instances; ++i) {
        const GradCheckResult r = model_grad_check(kind, cfg.seed + i);
        if (r.max_rel_error >= worst) {
          worst = r.max_rel_error;
          where = r.worst;
        }
      }
      out << "max relative error " << sci(worst) << " at " << where << " (" << to_string(kind) << ", threshold "
          << sci(grad_threshold) << ")\n";
      return worst < grad_threshold ? kExitOk : kExitCheck;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheck;
  }
  return kExitUsage;
}

}  // namespace ocrseg
