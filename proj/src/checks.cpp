#include "ocrseg/checks.hpp"

#include <algorithm>

#include "ocrseg/transformer_view.hpp"

namespace ocrseg {

EquivalenceSuite equivalence_suite(std::size_t instances, std::uint64_t seed, double tolerance, bool mismatch) {
  Rng rng(seed);
  EquivalenceSuite s;
  for (std::size_t n = 0; n < instances; ++n) {
    OcrConfig cfg;
    cfg.num_classes = static_cast<std::size_t>(rng.uniform_int(1, 4));
    cfg.in_channels = static_cast<std::size_t>(rng.uniform_int(1, 6));
    cfg.key_channels = static_cast<std::size_t>(rng.uniform_int(2, 6));
    cfg.mid_channels = static_cast<std::size_t>(rng.uniform_int(1, 6));
    cfg.stem_channels = rng.uniform_int(0, 1) ? static_cast<std::size_t>(rng.uniform_int(1, 5)) : 0;
    cfg.attention_scale = rng.uniform_int(0, 1) ? AttentionScale::unit : AttentionScale::inv_sqrt_d;
    const auto H = static_cast<std::size_t>(rng.uniform_int(1, 5));
    const auto W = static_cast<std::size_t>(rng.uniform_int(1, 5));
    auto p = OcrParams<double>::init(cfg, rng);
    randomize_batch_norm([&](auto&& f) { p.visit("", f); }, rng);
    Tensor<double> x(Shape{cfg.in_channels, H, W});
    for (auto& v : x.mutable_data()) v = rng.uniform(-2.0, 2.0);
    auto mapping = map_ocr_to_transformer(p, cfg);
    if (mismatch) {
      mapping.encoder_scale = cfg.attention_scale == AttentionScale::unit
                                  ? 1.0 / std::sqrt(static_cast<double>(cfg.key_channels))
                                  : 1.0;
    }
    const EquivalenceReport rep = segformer_equivalence_check(x, p, cfg, mapping, tolerance);
    ++s.instances;
    s.max_abs_discrepancy = std::max(s.max_abs_discrepancy, rep.max_abs_discrepancy);
    if (rep.passed) {
      ++s.passed;
    } else if (s.first_failure.empty()) {
      s.first_failure = "instance " + std::to_string(n) + ": " + rep.message;
    }
  }
  return s;
}

GradCheckResult model_grad_check(ModuleKind kind, std::uint64_t seed, const GradCheckOptions& opts) {
  Rng rng(seed);
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.num_classes = 3;
  cfg.in_channels = 3;
  cfg.key_channels = 3;
  cfg.mid_channels = 4;
  cfg.stem_channels = is_ocr_family(kind) || kind == ModuleKind::self_attn || kind == ModuleKind::global ? 3 : 0;
  cfg.branch_channels = 2;
  cfg.ppm_bins = {1, 2};
  cfg.aspp_rates = {1, 2};
  cfg.attention_scale = AttentionScale::inv_sqrt_d;
  const std::size_t H = 4, W = 4;
  auto model = SegModel<double>::init(cfg, rng);
  randomize_batch_norm([&](auto&& f) { model.visit(f); }, rng);

  Tensor<double> x(Shape{cfg.in_channels, H, W});
  for (auto& v : x.mutable_data()) v = rng.uniform(-1.0, 1.0);
  LabelMap labels{H, W, {}};
  for (std::size_t i = 0; i < H * W; ++i) labels.labels.push_back(static_cast<std::int32_t>(rng.uniform_int(0, 2)));
  labels.labels[5] = kIgnoreLabel;
  const LossConfig lc;

  NamedTensors inputs;
  model.visit([&](const std::string& name, Tensor<double>& t, bool learn) {
    if (learn) inputs.emplace_back(name, t);
  });
  inputs.emplace_back("input", x);
  auto loss_fn = [&] {
    auto pred = model.forward(x, kind == ModuleKind::gt_ocr ? &labels : nullptr);
    return combined_loss(pred.logits, pred.aux_logits, labels, lc).total;
  };
  return check_gradients(loss_fn, inputs, opts);
}

}  // namespace ocrseg
