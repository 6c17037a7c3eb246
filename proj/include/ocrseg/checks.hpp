#pragma once

// Seeded self-checks run by the CLI and the acceptance suite.

#include <cstdint>
#include <string>

#include "ocrseg/gradcheck.hpp"
#include "ocrseg/model.hpp"

namespace ocrseg {

// Random frozen-BN statistics and affine terms, so blocks are not near-identity.
template <typename F>
void randomize_batch_norm(F&& visit, Rng& rng) {
  visit([&](const std::string& name, Tensor<double>& t, bool) {
    auto ends = [&](const char* s) {
      const std::string suf(s);
      return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
    };
    for (auto& v : t.mutable_data()) {
      if (ends("bn_scale") || ends("bn_var")) {
        v = rng.uniform(0.5, 1.5);
      } else if (ends("bn_mean")) {
        v = rng.uniform(-0.3, 0.3);
      } else if (ends("bn_shift")) {
        v = rng.uniform(0.0, 0.5);
      }
    }
  });
}

struct EquivalenceSuite {
  std::size_t instances = 0;
  std::size_t passed = 0;
  double max_abs_discrepancy = 0.0;
  std::string first_failure;
};

// Random small OCR instances (K <= 4, maps up to 5x5) through both paths.
// With `mismatch` the transformer side uses a different attention scale.
EquivalenceSuite equivalence_suite(std::size_t instances, std::uint64_t seed, double tolerance, bool mismatch = false);

// Finite-difference check of the combined training loss with respect to
// every learnable tensor and the input, on a small seeded instance.
GradCheckResult model_grad_check(ModuleKind kind, std::uint64_t seed, const GradCheckOptions& opts = {});

}  // namespace ocrseg
