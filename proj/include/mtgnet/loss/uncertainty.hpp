#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mtgnet/core/error.hpp"
#include "mtgnet/core/ops.hpp"
#include "mtgnet/model/mtgnet.hpp"

namespace mtg {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kDiceSmooth = 1e-6;

/// Per-pixel predictive mean and population variance over Z samples.
struct UncertaintyMap {
  Shape shape;
  std::vector<double> mean;
  std::vector<double> variance;
  int samples = 0;

  double mean_variance() const {
    if (variance.empty()) return 0.0;
    double s = 0;
    for (double v : variance) s += v;
    return s / static_cast<double>(variance.size());
  }
};

/// Two-pass mean and variance (divide by Z) over equally shaped samples.
/// Values are shifted by the first sample, so identical samples give exactly
/// that sample and zero variance.
template <typename T>
UncertaintyMap mean_variance(const std::vector<Tensor<T>>& samples) {
  if (samples.empty()) throw ValidationError("mean_variance needs at least one sample");
  UncertaintyMap u;
  u.shape = samples.front().shape();
  u.samples = static_cast<int>(samples.size());
  const std::size_t n = u.shape.numel();
  const auto& base = samples.front().values();
  std::vector<double> shift(n, 0.0);
  for (const auto& s : samples) {
    if (s.shape() != u.shape) throw ShapeError("mean_variance: sample shapes differ");
    for (std::size_t i = 0; i < n; ++i) shift[i] += static_cast<double>(s.values()[i]) - static_cast<double>(base[i]);
  }
  const double z = static_cast<double>(samples.size());
  for (auto& m : shift) m /= z;
  u.variance.assign(n, 0.0);
  for (const auto& s : samples)
    for (std::size_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(s.values()[i]) - static_cast<double>(base[i]) - shift[i];
      u.variance[i] += d * d;
    }
  for (auto& v : u.variance) v /= z;
  u.mean.resize(n);
  for (std::size_t i = 0; i < n; ++i) u.mean[i] = static_cast<double>(base[i]) + shift[i];
  return u;
}

/// Probability-valued outputs of one stochastic pass, detached from the tape.
/// The shape map is stored as (s + 1) / 2 so every task lives in [0, 1].
template <typename T>
struct TaskSample {
  Tensor<T> region, boundary, shape, vessel;
};

/// Z forward passes with dropout active, batch norm on running statistics
/// and one independently seeded dropout stream per pass.
template <typename T>
std::vector<TaskSample<T>> mc_sample(MtgNet<T>& model, const Tensor<T>& image, int z_count, std::uint64_t seed,
                                     CascadeMode mode = CascadeMode::kInfer, bool with_vessel = true) {
  if (z_count < 1) throw ValidationError("mc_sample needs Z >= 1");
  NoGradGuard no_grad;
  std::vector<TaskSample<T>> out;
  out.reserve(static_cast<std::size_t>(z_count));
  for (int z = 0; z < z_count; ++z) {
    Rng rng(derive_seed({0x3cu, seed, static_cast<std::uint64_t>(z)}));
    nn::ForwardContext ctx;
    ctx.mc_dropout = true;
    ctx.dropout_rate = model.config().backbone.dropout_rate;
    ctx.rng = &rng;
    TaskSample<T> s;
    RegionOutput<T> r = model.forward_region(image, ctx);
    s.region = r.region_prob;
    s.boundary = r.boundary_prob;
    if (r.shape_map.defined()) s.shape = ops::scale(ops::add_scalar(r.shape_map, T(1)), T(0.5));
    if (with_vessel) s.vessel = model.forward_vessel(image, r.region_prob, mode, ctx).second;
    out.push_back(std::move(s));
  }
  return out;
}

/// Mean / variance maps per task from a list of MC samples. Missing tasks
/// yield empty maps.
struct TaskUncertainty {
  UncertaintyMap region, boundary, shape, vessel;
};

template <typename T>
TaskUncertainty summarize_samples(const std::vector<TaskSample<T>>& samples) {
  TaskUncertainty u;
  auto collect = [&](auto member) {
    std::vector<Tensor<T>> v;
    for (const auto& s : samples)
      if ((s.*member).defined()) v.push_back(s.*member);
    return v.empty() ? UncertaintyMap{} : mean_variance(v);
  };
  u.region = collect(&TaskSample<T>::region);
  u.boundary = collect(&TaskSample<T>::boundary);
  u.shape = collect(&TaskSample<T>::shape);
  u.vessel = collect(&TaskSample<T>::vessel);
  return u;
}

/// Per-image min-max normalisation of V to [0, 1] (constant images map to 0),
/// returned as the loss weight 1 + Normalize(V). `v` is laid out (N, ...).
inline std::vector<double> uncertainty_weights(const std::vector<double>& v, int batch) {
  std::vector<double> w(v.size(), 1.0);
  if (v.empty()) return w;
  if (batch < 1 || v.size() % static_cast<std::size_t>(batch) != 0)
    throw ShapeError("uncertainty_weights: map size is not a multiple of the batch");
  const std::size_t per = v.size() / static_cast<std::size_t>(batch);
  for (int b = 0; b < batch; ++b) {
    const auto first = v.begin() + static_cast<std::ptrdiff_t>(b * per);
    const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(per));
    const double range = *hi - *lo;
    if (range <= 0) continue;
    for (std::size_t i = 0; i < per; ++i) w[b * per + i] = 1.0 + (v[b * per + i] - *lo) / range;
  }
  return w;
}

namespace detail {

template <typename T>
void require_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw ValidationError(std::string(what) + " contains NaN or Inf");
}

}  // namespace detail

/// Pixel-wise binary cross entropy with predictions clamped to [1e-7, 1 - 1e-7].
template <typename T>
Tensor<T> bce_map(const Tensor<T>& pred, const Tensor<T>& target) {
  const Tensor<T> p = ops::clamp(pred, static_cast<T>(kProbClamp), static_cast<T>(1.0 - kProbClamp));
  const Tensor<T> one = Tensor<T>::filled(pred.shape(), T(1));
  const Tensor<T> pos = ops::mul(target, ops::log(p));
  const Tensor<T> neg = ops::mul(ops::sub(one, target), ops::log(ops::sub(one, p)));
  return ops::neg(ops::add(pos, neg));
}

/// Mean over pixels of (1 + Normalize(V)) * BCE. V is data: no gradient flows
/// through it. An empty V means V = 0 (plain BCE).
template <typename T>
Tensor<T> uce_loss(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<double>& variance) {
  if (pred.shape() != target.shape()) throw ShapeError("uce_loss: pred " + pred.shape().str() + " vs target " + target.shape().str());
  detail::require_finite(pred, "uce_loss prediction");
  detail::require_finite(target, "uce_loss target");
  for (double v : variance)
    if (!std::isfinite(v)) throw ValidationError("uce_loss variance contains NaN or Inf");
  if (!variance.empty() && variance.size() != pred.numel()) throw ShapeError("uce_loss: variance map size mismatch");
  const Tensor<T> bce = bce_map(pred, target);
  if (variance.empty()) return ops::mean(bce);
  const int batch = pred.shape().rank() >= 1 ? pred.dim(0) : 1;
  const auto w = uncertainty_weights(variance, batch);
  std::vector<T> wt(w.begin(), w.end());
  return ops::mean(ops::mul(Tensor<T>::from(pred.shape(), std::move(wt)), bce));
}

/// Uncertainty loss of the shape regression: the confidence 2 sigmoid(|e|) - 1
/// of the error e = pred - target is pushed towards 0.
template <typename T>
Tensor<T> shape_uce_loss(const Tensor<T>& pred, const Tensor<T>& target, const std::vector<double>& variance) {
  const Tensor<T> err = ops::abs(ops::sub(pred, target));
  const Tensor<T> conf = ops::add_scalar(ops::scale(ops::sigmoid(err), T(2)), T(-1));
  return uce_loss(conf, Tensor<T>::zeros(pred.shape()), variance);
}

/// Soft Dice loss averaged over the batch: 1 - (2 sum pg + eps) / (sum p + sum g + eps).
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) throw ShapeError("dice_loss: pred " + pred.shape().str() + " vs target " + target.shape().str());
  const T eps = static_cast<T>(kDiceSmooth);
  const Tensor<T> inter = ops::sum_per_sample(ops::mul(pred, target));
  const Tensor<T> denom = ops::add_scalar(ops::add(ops::sum_per_sample(pred), ops::sum_per_sample(target)), eps);
  const Tensor<T> ratio = ops::div(ops::add_scalar(ops::scale(inter, T(2)), eps), denom);
  return ops::sub(Tensor<T>::scalar(T(1)), ops::mean(ratio));
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) throw ShapeError("mse_loss: shape mismatch");
  return ops::mean(ops::square(ops::sub(pred, target)));
}

template <typename T>
struct TaskPredictions {
  Tensor<T> region, boundary, shape, vessel;  // probabilities; shape in [-1, 1]
};

template <typename T>
struct TaskTargets {
  Tensor<T> region, boundary, shape, vessel;
};

/// Variance maps per task, laid out like the predictions; empty means V = 0.
struct TaskVariances {
  std::vector<double> region, boundary, shape, vessel;
};

template <typename T>
struct TaskLosses {
  Tensor<T> region, boundary, shape, vessel;  // undefined for inactive tasks

  static double value(const Tensor<T>& t) { return t.defined() ? static_cast<double>(t.item()) : 0.0; }
};

/// Region / boundary / vessel: Dice + uce. Shape: MSE + uce. A task is active
/// when its prediction is defined; an active task without a target is an error.
template <typename T>
TaskLosses<T> task_losses(const TaskPredictions<T>& p, const TaskTargets<T>& t, const TaskVariances& v) {
  TaskLosses<T> out;
  auto need = [](const Tensor<T>& target, const char* name) {
    if (!target.defined()) throw ValidationError(std::string("missing target for the ") + name + " task");
  };
  if (!p.region.defined() || !p.vessel.defined()) throw ValidationError("region and vessel predictions are required");
  need(t.region, "region");
  need(t.vessel, "vessel");
  out.region = ops::add(dice_loss(p.region, t.region), uce_loss(p.region, t.region, v.region));
  out.vessel = ops::add(dice_loss(p.vessel, t.vessel), uce_loss(p.vessel, t.vessel, v.vessel));
  if (p.boundary.defined()) {
    need(t.boundary, "boundary");
    out.boundary = ops::add(dice_loss(p.boundary, t.boundary), uce_loss(p.boundary, t.boundary, v.boundary));
  }
  if (p.shape.defined()) {
    need(t.shape, "shape");
    out.shape = ops::add(mse_loss(p.shape, t.shape), shape_uce_loss(p.shape, t.shape, v.shape));
  }
  return out;
}

struct LossWeights {
  double region = 1.0 / 3.0;
  double boundary = 1.0 / 3.0;
  double shape = 1.0 / 3.0;

  double sum() const { return region + boundary + shape; }
};

/// Uniform weights over the active auxiliary-task set.
inline LossWeights uniform_weights(bool boundary, bool shape) {
  const double n = 1.0 + (boundary ? 1 : 0) + (shape ? 1 : 0);
  return {1.0 / n, boundary ? 1.0 / n : 0.0, shape ? 1.0 / n : 0.0};
}

/// lambda_i = V_i / sum V over the active tasks; uniform when the sum is 0.
inline LossWeights adaptive_weights(double v_reg, double v_bou, double v_shp, bool boundary = true, bool shape = true) {
  for (double v : {v_reg, v_bou, v_shp})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("adaptive_weights: variances must be finite and >= 0");
  if (!boundary) v_bou = 0.0;
  if (!shape) v_shp = 0.0;
  const double total = v_reg + v_bou + v_shp;
  if (total <= 0.0) return uniform_weights(boundary, shape);
  return {v_reg / total, v_bou / total, v_shp / total};
}

/// lambda_reg L_reg + lambda_bou L_bou + lambda_shp L_shp + L_ves.
template <typename T>
Tensor<T> total_loss(const TaskLosses<T>& l, const LossWeights& w) {
  Tensor<T> acc = ops::add(ops::scale(l.region, static_cast<T>(w.region)), l.vessel);
  if (l.boundary.defined()) acc = ops::add(acc, ops::scale(l.boundary, static_cast<T>(w.boundary)));
  if (l.shape.defined()) acc = ops::add(acc, ops::scale(l.shape, static_cast<T>(w.shape)));
  return acc;
}

}  // namespace mtg
