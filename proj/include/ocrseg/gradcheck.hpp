#pragma once

// Central finite-difference gradient checking against the tape.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ocrseg/ops.hpp"

namespace ocrseg {

struct GradCheckOptions {
  double step = 1e-6;
  // Denominator floor for the per-entry relative error
  //   |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-4;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::string worst;  // "<name>[index]" of the worst entry
};

using NamedTensors = std::vector<std::pair<std::string, Tensor<double>>>;

// `loss_fn` must rebuild the scalar loss from the current values of `inputs`.
// Gradients of the inputs are reset before and after the check.
GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss_fn, NamedTensors inputs,
                                const GradCheckOptions& opts = {});

}  // namespace ocrseg
