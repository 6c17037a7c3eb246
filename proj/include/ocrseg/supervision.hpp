#pragma once

// Ground-truth regions/relations (the GT-OCR oracle), pixel-wise losses for
// both heads, and the polynomial learning-rate schedule.

#include <cstdint>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "ocrseg/context_modules.hpp"

namespace ocrseg {

inline constexpr std::int32_t kIgnoreLabel = 255;

struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;  // row-major, values in [0, K) or kIgnoreLabel

  std::size_t size() const { return labels.size(); }
  // Throws DataError when a non-ignore label is >= K or negative.
  void validate(std::size_t num_classes) const;
};

struct LossConfig {
  double final_weight = 1.0;
  double aux_weight = 0.4;
  std::int32_t ignore_index = kIgnoreLabel;

  void validate() const;
};

enum class PolyForm {
  conventional,  // base * (1 - it/max)^power
  literal,       // base * (1 - (it/max)^power)
};

struct PolySchedule {
  double base_lr = 0.01;
  std::size_t max_iter = 1;
  double power = 0.9;
  PolyForm form = PolyForm::conventional;
};

// Clamps to 0 for iter >= max_iter.
double poly_lr(const PolySchedule& s, std::size_t iter);

const char* to_string(PolyForm f);
PolyForm parse_poly_form(const std::string& s);

// m_ki = 1 iff l_i == k; each normalised row is uniform over that class's
// pixels. Classes without pixels get an all-zero row and empty[k] = true.
template <typename T>
SoftRegionSet<T> gt_regions(const LabelMap& labels, std::size_t K) {
  if (K == 0) throw ConfigError("gt_regions: K must be >= 1");
  labels.validate(K);
  const std::size_t N = labels.size();
  SoftRegionSet<T> r;
  r.logits = Tensor<T>(Shape{K, N});
  r.normalized = Tensor<T>(Shape{K, N});
  r.height = labels.height;
  r.width = labels.width;
  std::vector<std::size_t> count(K, 0);
  for (auto l : labels.labels)
    if (l != kIgnoreLabel) ++count[static_cast<std::size_t>(l)];
  for (std::size_t i = 0; i < N; ++i) {
    const auto l = labels.labels[i];
    if (l == kIgnoreLabel) continue;
    const auto k = static_cast<std::size_t>(l);
    r.logits[k * N + i] = T(1);
    r.normalized[k * N + i] = T(1) / static_cast<T>(count[k]);
  }
  r.empty.resize(K);
  for (std::size_t k = 0; k < K; ++k) r.empty[k] = count[k] == 0;
  return r;
}

// w_ik = 1 iff l_i == k. Ignored pixels get a zero row and zeroed[i] = true.
template <typename T>
RelationMatrix<T> gt_relations(const LabelMap& labels, std::size_t K) {
  labels.validate(K);
  const std::size_t N = labels.size();
  RelationMatrix<T> w;
  w.weights = Tensor<T>(Shape{N, K});
  w.height = labels.height;
  w.width = labels.width;
  w.zeroed.assign(N, false);
  for (std::size_t i = 0; i < N; ++i) {
    const auto l = labels.labels[i];
    if (l == kIgnoreLabel) {
      w.zeroed[i] = true;
      continue;
    }
    w.weights[i * K + static_cast<std::size_t>(l)] = T(1);
  }
  return w;
}

// OCR with ground-truth regions and relations substituted for the learned ones.
template <typename T>
OcrOutput<T> gt_ocr_forward(const Tensor<T>& x, const LabelMap& labels, const OcrParams<T>& p, const OcrConfig& cfg) {
  detail::require_feature_map(x, "gt_ocr_forward");
  if (labels.height != x.dim(1) || labels.width != x.dim(2)) {
    throw DimensionError("gt_ocr_forward: label map " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width) + " vs features " + shape_str(x.shape()));
  }
  OcrOutput<T> out;
  out.regions = gt_regions<T>(labels, cfg.num_classes);
  out.context_regions = out.regions;
  out.pixels = p.stem ? conv_block_forward(*p.stem, x) : x;
  out.reps = region_representations(pixel_rows(out.pixels), out.regions);
  out.relations = gt_relations<T>(labels, cfg.num_classes);
  out.y = ocr_aggregate(out.relations, out.reps, p.delta, p.rho);
  out.z = augment(out.pixels, out.y, p.g);
  return out;
}

template <typename T>
CrossEntropyResult<T> pixel_cross_entropy(const Tensor<T>& logits, const LabelMap& labels,
                                          std::int32_t ignore_index = kIgnoreLabel) {
  return cross_entropy_cols(as_matrix(logits), std::span<const std::int32_t>(labels.labels), ignore_index);
}

template <typename T>
struct CombinedLoss {
  Tensor<T> total;
  T final_ce = T(0);
  T aux_ce = T(0);
  bool all_ignored = false;
};

// final_weight * CE(final) + aux_weight * CE(aux). aux may be absent, in
// which case it contributes nothing.
template <typename T>
CombinedLoss<T> combined_loss(const Tensor<T>& final_logits,
                              const std::type_identity_t<std::optional<Tensor<T>>>& aux_logits,
                              const LabelMap& labels, const LossConfig& cfg) {
  cfg.validate();
  CombinedLoss<T> out;
  auto fin = pixel_cross_entropy(final_logits, labels, cfg.ignore_index);
  out.final_ce = fin.loss.item();
  out.all_ignored = fin.all_ignored;
  out.total = scale(fin.loss, static_cast<T>(cfg.final_weight));
  if (aux_logits && cfg.aux_weight > 0.0) {
    auto aux = pixel_cross_entropy(*aux_logits, labels, cfg.ignore_index);
    out.aux_ce = aux.loss.item();
    out.total = add(out.total, scale(aux.loss, static_cast<T>(cfg.aux_weight)));
  } else if (aux_logits) {
    out.aux_ce = pixel_cross_entropy(*aux_logits, labels, cfg.ignore_index).loss.item();
  }
  return out;
}

}  // namespace ocrseg
