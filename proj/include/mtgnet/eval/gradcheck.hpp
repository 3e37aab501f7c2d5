#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "mtgnet/core/error.hpp"
#include "mtgnet/core/tensor.hpp"

namespace mtg {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of a scalar function with central
/// differences. Relative error uses max(|analytic|, |numeric|, floor) as the
/// denominator so that near-zero gradients are compared absolutely.
inline GradCheckResult fd_gradient_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& fn, std::vector<Tensor<double>> inputs,
    double eps = 1e-4, double floor = 1e-3) {
  for (auto& t : inputs) {
    t = Tensor<double>::parameter(t.shape(), t.values());
  }
  Tensor<double> y = fn(inputs);
  if (y.numel() != 1) throw ShapeError("fd_gradient_check needs a scalar function");
  if (!y.all_finite()) throw ValidationError("fd_gradient_check: function value is not finite");
  y.backward();

  GradCheckResult res;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& vals = inputs[k].values();
    const std::vector<double> analytic =
        inputs[k].has_grad() ? std::vector<double>(inputs[k].grad().begin(), inputs[k].grad().end())
                             : std::vector<double>(vals.size(), 0.0);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + eps;
      const double fp = fn(inputs).item();
      vals[i] = orig - eps;
      const double fm = fn(inputs).item();
      vals[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw ValidationError("fd_gradient_check: function value is not finite");
      const double numeric = (fp - fm) / (2 * eps);
      const double err =
          std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      if (err > res.max_relative_error || (k == 0 && i == 0)) {
        res = {err, k, i, analytic[i], numeric};
      }
    }
  }
  return res;
}

}  // namespace mtg
