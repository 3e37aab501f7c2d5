#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mtgnet/nn/layers.hpp"

namespace mtg::nn {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Coupled L2 penalty added to the gradient.
  double weight_decay = 1e-4;
};

/// Adam with L2 weight decay folded into the gradient. Moment buffers are
/// keyed by parameter order, so the same model layout must be used on resume.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  void step(ParameterSet<T>& ps) {
    if (m_.empty()) {
      for (const auto& p : ps.params) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < ps.params.size(); ++k) {
      auto& tensor = ps.params[k].tensor;
      if (!tensor.has_grad()) continue;
      auto& val = tensor.values();
      const auto g = tensor.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double gi = static_cast<double>(g[i]) + opts_.weight_decay * static_cast<double>(val[i]);
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * gi;
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        val[i] = static_cast<T>(static_cast<double>(val[i]) - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
      }
    }
  }

  std::int64_t steps() const { return t_; }
  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  AdamOptions opts_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace mtg::nn
