#pragma once

// Segmentation heads built from the context modules, with a shared final
// 1x1 classifier. One SegModel wraps exactly one context scheme; the
// OCR-family kinds (ocr, da, acf, gt_ocr) also expose the soft-region head
// for the auxiliary loss.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ocrseg/supervision.hpp"

namespace ocrseg {

enum class ModuleKind { ocr, self_attn, global, da, acf, aspp_lite, ppm_lite, gt_ocr };

const char* to_string(ModuleKind k);
ModuleKind parse_module_kind(const std::string& s);
bool is_ocr_family(ModuleKind k);

struct ModelConfig {
  ModuleKind kind = ModuleKind::ocr;
  std::size_t num_classes = 4;
  std::size_t in_channels = 18;
  std::size_t key_channels = 16;
  std::size_t mid_channels = 32;
  std::size_t stem_channels = 0;
  AttentionScale attention_scale = AttentionScale::unit;
  std::size_t da_regions = 0;
  std::vector<std::size_t> ppm_bins{1, 2, 3, 6};
  std::vector<std::size_t> aspp_rates{1, 6, 12};
  // Width of each PPM / ASPP branch; 0 picks mid_channels (PPM) or key_channels (ASPP).
  std::size_t branch_channels = 0;

  void validate() const;
  OcrConfig ocr_config() const;
  std::size_t pixel_channels() const { return stem_channels ? stem_channels : in_channels; }
  std::size_t ppm_branch() const { return branch_channels ? branch_channels : mid_channels; }
  std::size_t aspp_branch() const { return branch_channels ? branch_channels : key_channels; }
};

template <typename T>
struct ModelOutput {
  Tensor<T> z;                         // fused representation [mid x H x W]
  std::optional<Tensor<T>> aux_logits;  // [K x N] soft-region logits
  std::optional<OcrOutput<T>> ocr;      // intermediate OCR state, OCR family only
};

template <typename T>
class SegModel {
 public:
  static SegModel init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    SegModel m;
    m.cfg_ = cfg;
    const std::size_t cp = cfg.pixel_channels();
    switch (cfg.kind) {
      case ModuleKind::ocr:
      case ModuleKind::da:
      case ModuleKind::acf:
      case ModuleKind::gt_ocr:
        m.ocr_ = OcrParams<T>::init(cfg.ocr_config(), rng);
        break;
      case ModuleKind::self_attn:
        if (cfg.stem_channels) m.stem_ = ConvBlock<T>::init(cfg.in_channels, cfg.stem_channels, 3, rng);
        m.phi_ = TransformBlock<T>::init(cp, cfg.key_channels, rng);
        m.psi_ = TransformBlock<T>::init(cp, cfg.key_channels, rng);
        m.delta_ = TransformBlock<T>::init(cp, cfg.key_channels, rng);
        m.rho_ = TransformBlock<T>::init(cfg.key_channels, cfg.mid_channels, rng);
        m.fuse_ = TransformBlock<T>::init(cp + cfg.mid_channels, cfg.mid_channels, rng);
        break;
      case ModuleKind::global:
        if (cfg.stem_channels) m.stem_ = ConvBlock<T>::init(cfg.in_channels, cfg.stem_channels, 3, rng);
        m.delta_ = TransformBlock<T>::init(cp, cfg.key_channels, rng);
        m.rho_ = TransformBlock<T>::init(cfg.key_channels, cfg.mid_channels, rng);
        m.fuse_ = TransformBlock<T>::init(cp + cfg.mid_channels, cfg.mid_channels, rng);
        break;
      case ModuleKind::aspp_lite:
        m.aspp_ = DilatedConvSpec<T>::init(cfg.in_channels, cfg.aspp_branch(), cfg.aspp_rates, rng);
        m.fuse_ = TransformBlock<T>::init(cfg.aspp_branch() * cfg.aspp_rates.size(), cfg.mid_channels, rng);
        break;
      case ModuleKind::ppm_lite:
        for (std::size_t i = 0; i < cfg.ppm_bins.size(); ++i) {
          m.ppm_convs_.push_back(init_uniform<T>(Shape{cfg.ppm_branch(), cfg.in_channels}, cfg.in_channels, rng));
        }
        m.bottleneck_ = ConvBlock<T>::init(cfg.in_channels + cfg.ppm_branch() * cfg.ppm_bins.size(), cfg.mid_channels, 3, rng);
        break;
    }
    m.cls_weight_ = init_uniform<T>(Shape{cfg.num_classes, cfg.mid_channels}, cfg.mid_channels, rng);
    m.cls_bias_ = Tensor<T>(Shape{cfg.num_classes});
    return m;
  }

  const ModelConfig& config() const { return cfg_; }

  // Context head only (what the profiler measures): z plus auxiliary logits.
  ModelOutput<T> context_forward(const Tensor<T>& x, const LabelMap* labels = nullptr) const {
    detail::require_feature_map(x, "SegModel");
    ModelOutput<T> out;
    switch (cfg_.kind) {
      case ModuleKind::ocr:
      case ModuleKind::da:
      case ModuleKind::acf: {
        out.ocr = ocr_forward(x, *ocr_, cfg_.ocr_config());
        out.z = out.ocr->z;
        out.aux_logits = out.ocr->regions.logits;
        break;
      }
      case ModuleKind::gt_ocr: {
        if (!labels) throw ContractError("gt_ocr forward needs ground-truth labels");
        out.ocr = gt_ocr_forward(x, *labels, *ocr_, cfg_.ocr_config());
        out.z = out.ocr->z;
        break;
      }
      case ModuleKind::self_attn: {
        Tensor<T> p = stem_ ? conv_block_forward(*stem_, x) : x;
        Tensor<T> y = self_attention_context(p, *phi_, *psi_, *delta_, *rho_,
                                             attention_scale_value(cfg_.attention_scale, cfg_.key_channels));
        out.z = augment(p, y, *fuse_);
        break;
      }
      case ModuleKind::global: {
        Tensor<T> p = stem_ ? conv_block_forward(*stem_, x) : x;
        out.z = augment(p, global_context(p, *delta_, *rho_), *fuse_);
        break;
      }
      case ModuleKind::aspp_lite:
        out.z = transform_forward(*fuse_, aspp_lite(x, *aspp_));
        break;
      case ModuleKind::ppm_lite:
        out.z = conv_block_forward(*bottleneck_, ppm_lite(x, cfg_.ppm_bins, ppm_convs_));
        break;
    }
    return out;
  }

  // Final segmentation logits [K x H x W] plus the auxiliary head.
  struct Prediction {
    Tensor<T> logits;
    std::optional<Tensor<T>> aux_logits;
  };

  Prediction forward(const Tensor<T>& x, const LabelMap* labels = nullptr) const {
    ModelOutput<T> ctx = context_forward(x, labels);
    return {conv1x1(ctx.z, cls_weight_, cls_bias_), ctx.aux_logits};
  }

  // f(name, tensor, learnable) over every parameter and frozen buffer, in a
  // fixed order.
  template <typename F>
  void visit(F&& f) {
    if (ocr_) ocr_->visit("ocr.", f);
    if (stem_) stem_->visit("stem", f);
    if (phi_) phi_->visit("phi", f);
    if (psi_) psi_->visit("psi", f);
    if (delta_) delta_->visit("delta", f);
    if (rho_) rho_->visit("rho", f);
    if (aspp_) {
      for (std::size_t i = 0; i < aspp_->kernels.size(); ++i) f("aspp.rate" + std::to_string(i), aspp_->kernels[i], true);
    }
    for (std::size_t i = 0; i < ppm_convs_.size(); ++i) f("ppm.bin" + std::to_string(i), ppm_convs_[i], true);
    if (bottleneck_) bottleneck_->visit("bottleneck", f);
    if (fuse_) fuse_->visit("fuse", f);
    f("cls.weight", cls_weight_, true);
    f("cls.bias", cls_bias_, true);
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_tensors() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    visit([&](const std::string& n, Tensor<T>& t, bool) { out.emplace_back(n, t); });
    return out;
  }

  std::vector<Tensor<T>> learnable() {
    std::vector<Tensor<T>> out;
    visit([&](const std::string&, Tensor<T>& t, bool learn) {
      if (learn) out.push_back(t);
    });
    return out;
  }

  // Learnable scalars of the context head (final classifier excluded).
  std::size_t context_param_count() {
    std::size_t n = 0;
    visit([&](const std::string& name, Tensor<T>& t, bool learn) {
      if (learn && name.rfind("cls.", 0) != 0) n += t.numel();
    });
    return n;
  }

  const std::optional<OcrParams<T>>& ocr_params() const { return ocr_; }

 private:
  ModelConfig cfg_;
  std::optional<OcrParams<T>> ocr_;
  std::optional<ConvBlock<T>> stem_;
  std::optional<TransformBlock<T>> phi_, psi_, delta_, rho_, fuse_;
  std::optional<DilatedConvSpec<T>> aspp_;
  std::vector<Tensor<T>> ppm_convs_;
  std::optional<ConvBlock<T>> bottleneck_;
  Tensor<T> cls_weight_;
  Tensor<T> cls_bias_;
};

}  // namespace ocrseg
