#include "ocrseg/supervision.hpp"

#include <cmath>

namespace ocrseg {

void LabelMap::validate(std::size_t num_classes) const {
  if (labels.size() != height * width) {
    throw DataError("label map holds " + std::to_string(labels.size()) + " labels for a " + std::to_string(height) +
                    "x" + std::to_string(width) + " grid");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = labels[i];
    if (l == kIgnoreLabel) continue;
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw DataError("label " + std::to_string(l) + " at pixel " + std::to_string(i) + " is outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
}

void LossConfig::validate() const {
  if (!(final_weight >= 0.0) || !(aux_weight >= 0.0)) throw ConfigError("loss weights must be >= 0");
}

double poly_lr(const PolySchedule& s, std::size_t iter) {
  if (s.max_iter == 0) throw ConfigError("poly schedule: max_iter must be >= 1");
  if (iter >= s.max_iter) return 0.0;
  const double frac = static_cast<double>(iter) / static_cast<double>(s.max_iter);
  if (s.form == PolyForm::literal) return s.base_lr * (1.0 - std::pow(frac, s.power));
  return s.base_lr * std::pow(1.0 - frac, s.power);
}

const char* to_string(PolyForm f) { return f == PolyForm::conventional ? "conventional" : "literal"; }

PolyForm parse_poly_form(const std::string& s) {
  if (s == "conventional") return PolyForm::conventional;
  if (s == "literal") return PolyForm::literal;
  throw ConfigError("unknown poly form '" + s + "' (expected conventional or literal)");
}

}  // namespace ocrseg
