#include "ocrseg/context_modules.hpp"

#include <algorithm>

namespace ocrseg {

const char* to_string(RelationScheme s) {
  switch (s) {
    case RelationScheme::ocr:
      return "ocr";
    case RelationScheme::da:
      return "da";
    case RelationScheme::acf:
      return "acf";
  }
  return "?";
}

RelationScheme parse_relation_scheme(const std::string& s) {
  if (s == "ocr") return RelationScheme::ocr;
  if (s == "da") return RelationScheme::da;
  if (s == "acf") return RelationScheme::acf;
  throw ConfigError("unknown relation scheme '" + s + "' (expected ocr, da or acf)");
}

const char* to_string(AttentionScale s) { return s == AttentionScale::unit ? "unit" : "inv_sqrt_d"; }

AttentionScale parse_attention_scale(const std::string& s) {
  if (s == "unit" || s == "1") return AttentionScale::unit;
  if (s == "inv_sqrt_d" || s == "1/sqrt(d)") return AttentionScale::inv_sqrt_d;
  throw ConfigError("unknown attention scale '" + s + "' (expected unit or inv_sqrt_d)");
}

void OcrConfig::validate() const {
  if (num_classes < 1) throw ConfigError("OcrConfig: num_classes must be >= 1");
  if (in_channels < 1) throw ConfigError("OcrConfig: in_channels must be >= 1");
  if (key_channels < 1) throw ConfigError("OcrConfig: key_channels must be >= 1");
  if (mid_channels < 1) throw ConfigError("OcrConfig: mid_channels must be >= 1");
}

ScaledRates scaled_aspp_rates(std::size_t image_size, const std::vector<std::size_t>& base) {
  ScaledRates out;
  for (std::size_t r : base) {
    const auto scaled = static_cast<std::size_t>(static_cast<double>(r) * static_cast<double>(image_size) / 64.0);
    if ((r > 1 && scaled < 1) || scaled >= image_size) out.clipped = true;
    out.rates.push_back(std::max<std::size_t>(1, scaled));
  }
  return out;
}

}  // namespace ocrseg
