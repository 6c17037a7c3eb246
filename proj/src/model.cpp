#include "ocrseg/model.hpp"

namespace ocrseg {

namespace {
struct KindName {
  ModuleKind kind;
  const char* name;
};
constexpr KindName kKinds[] = {
    {ModuleKind::ocr, "ocr"},         {ModuleKind::self_attn, "self_attn"}, {ModuleKind::global, "global"},
    {ModuleKind::da, "da"},           {ModuleKind::acf, "acf"},             {ModuleKind::aspp_lite, "aspp_lite"},
    {ModuleKind::ppm_lite, "ppm_lite"}, {ModuleKind::gt_ocr, "gt_ocr"},
};
}  // namespace

const char* to_string(ModuleKind k) {
  for (const auto& e : kKinds)
    if (e.kind == k) return e.name;
  return "?";
}

ModuleKind parse_module_kind(const std::string& s) {
  for (const auto& e : kKinds)
    if (s == e.name) return e.kind;
  throw ConfigError("unknown module '" + s + "' (expected ocr, self_attn, global, da, acf, aspp_lite, ppm_lite, gt_ocr)");
}

bool is_ocr_family(ModuleKind k) {
  return k == ModuleKind::ocr || k == ModuleKind::da || k == ModuleKind::acf || k == ModuleKind::gt_ocr;
}

void ModelConfig::validate() const {
  if (num_classes < 1) throw ConfigError("model: num_classes must be >= 1");
  if (in_channels < 1 || key_channels < 1 || mid_channels < 1) throw ConfigError("model: channel widths must be >= 1");
  if (kind == ModuleKind::ppm_lite && ppm_bins.empty()) throw ConfigError("model: ppm_lite needs at least one bin");
  if (kind == ModuleKind::aspp_lite) {
    if (aspp_rates.empty()) throw ConfigError("model: aspp_lite needs at least one rate");
    for (auto r : aspp_rates)
      if (r < 1) throw ConfigError("model: aspp rates must be >= 1");
  }
}

OcrConfig ModelConfig::ocr_config() const {
  OcrConfig c;
  c.num_classes = num_classes;
  c.in_channels = in_channels;
  c.key_channels = key_channels;
  c.mid_channels = mid_channels;
  c.stem_channels = stem_channels;
  c.attention_scale = attention_scale;
  c.da_regions = da_regions;
  c.relation_scheme = kind == ModuleKind::da ? RelationScheme::da
                      : kind == ModuleKind::acf ? RelationScheme::acf
                                                : RelationScheme::ocr;
  return c;
}

}  // namespace ocrseg
