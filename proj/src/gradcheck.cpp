#include "ocrseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ocrseg {

GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss_fn, NamedTensors inputs,
                                const GradCheckOptions& opts) {
  std::vector<bool> saved_flags;
  for (auto& [name, t] : inputs) {
    saved_flags.push_back(t.requires_grad());
    t.zero_grad();
    t.set_requires_grad(true);
  }

  std::vector<std::vector<double>> analytic;
  {
    GradTape<double> tape;
    Tensor<double> loss;
    {
      TapeScope<double> scope(tape);
      loss = loss_fn();
    }
    backward(loss, tape);
    for (auto& [name, t] : inputs) {
      if (t.has_grad()) {
        analytic.emplace_back(t.grad().begin(), t.grad().end());
      } else {
        analytic.emplace_back(t.numel(), 0.0);
      }
      t.zero_grad();
    }
  }

  GradCheckResult res;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    auto& [name, t] = inputs[p];
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + opts.step;
      const double up = loss_fn().item();
      data[i] = orig - opts.step;
      const double down = loss_fn().item();
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[p][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
      ++res.entries;
      if (err > res.max_rel_error || res.worst.empty()) {
        if (err >= res.max_rel_error) {
          res.max_rel_error = err;
          res.worst = name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  for (std::size_t p = 0; p < inputs.size(); ++p) inputs[p].second.set_requires_grad(saved_flags[p]);
  return res;
}

}  // namespace ocrseg
