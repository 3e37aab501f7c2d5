#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mtgnet/core/ops.hpp"
#include "mtgnet/core/rng.hpp"
#include "mtgnet/core/tensor.hpp"

namespace mtg::nn {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* data;
};

/// Flat, hierarchically named view over a model's learnable tensors and
/// non-learned buffers (batch-norm running statistics).
template <typename T>
struct ParameterSet {
  std::vector<NamedParam<T>> params;
  std::vector<NamedBuffer<T>> buffers;

  void add(const std::string& name, const Tensor<T>& t) { params.push_back({name, t}); }
  void add_buffer(const std::string& name, std::vector<T>& v) { buffers.push_back({name, &v}); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
  }

  /// Clears every gradient, so parameters no loss reaches are skipped by the optimiser.
  void zero_grad() {
    for (auto& p : params) p.tensor.clear_grad();
  }
};

/// Per-forward switches. Dropout fires when training, or when MC sampling
/// keeps it on at inference.
struct ForwardContext {
  bool training = false;
  bool mc_dropout = false;
  double dropout_rate = 0.5;
  Rng* rng = nullptr;

  bool dropout_active() const { return (training || mc_dropout) && dropout_rate > 0.0 && rng != nullptr; }
};

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, const ForwardContext& ctx) {
  if (!ctx.dropout_active()) return x;
  return ops::dropout(x, ctx.dropout_rate, *ctx.rng);
}

template <typename T>
std::vector<T> he_normal(std::size_t count, int fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / std::max(1, fan_in));
  std::vector<T> v(count);
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, sd));
  return v;
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int kernel, int dilation, Rng& rng, bool bias = true)
      : dilation_(dilation),
        weight_(Tensor<T>::parameter(Shape{out_ch, in_ch, kernel, kernel},
                                     he_normal<T>(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel,
                                                  in_ch * kernel * kernel, rng))) {
    if (bias) bias_ = Tensor<T>::parameter(Shape{out_ch}, std::vector<T>(static_cast<std::size_t>(out_ch), T(0)));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv2d(x, weight_, bias_, dilation_); }

  void collect(ParameterSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight_);
    if (bias_.defined()) ps.add(prefix + ".bias", bias_);
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }
  int out_channels() const { return weight_.dim(0); }

 private:
  int dilation_ = 1;
  Tensor<T> weight_;
  Tensor<T> bias_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels)
      : gamma_(Tensor<T>::parameter(Shape{channels}, std::vector<T>(static_cast<std::size_t>(channels), T(1)))),
        beta_(Tensor<T>::parameter(Shape{channels}, std::vector<T>(static_cast<std::size_t>(channels), T(0)))) {
    state_.running_mean.assign(static_cast<std::size_t>(channels), T(0));
    state_.running_var.assign(static_cast<std::size_t>(channels), T(1));
  }

  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext& ctx) {
    return ops::batch_norm(x, gamma_, beta_, state_, ctx.training);
  }

  void collect(ParameterSet<T>& ps, const std::string& prefix) {
    ps.add(prefix + ".gamma", gamma_);
    ps.add(prefix + ".beta", beta_);
    ps.add_buffer(prefix + ".running_mean", state_.running_mean);
    ps.add_buffer(prefix + ".running_var", state_.running_var);
  }

  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  ops::BatchNormState<T>& state() { return state_; }

 private:
  Tensor<T> gamma_;
  Tensor<T> beta_;
  ops::BatchNormState<T> state_;
};

/// conv -> batch norm -> ReLU.
template <typename T>
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(int in_ch, int out_ch, int dilation, Rng& rng)
      : conv_(in_ch, out_ch, 3, dilation, rng, /*bias=*/false), bn_(out_ch) {}

  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext& ctx) { return ops::relu(bn_(conv_(x), ctx)); }

  void collect(ParameterSet<T>& ps, const std::string& prefix) {
    conv_.collect(ps, prefix + ".conv");
    bn_.collect(ps, prefix + ".bn");
  }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
};

/// Affine map on the rows of a matrix: (m, in) -> (m, out).
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true)
      : weight_(Tensor<T>::parameter(Shape{in, out}, he_normal<T>(static_cast<std::size_t>(in) * out, in, rng))) {
    if (bias) bias_ = Tensor<T>::parameter(Shape{1, out}, std::vector<T>(static_cast<std::size_t>(out), T(0)));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> y = ops::matmul(x, weight_);
    if (bias_.defined()) y = ops::add(y, ops::expand(bias_, y.dim(0), y.dim(1)));
    return y;
  }

  void collect(ParameterSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight_);
    if (bias_.defined()) ps.add(prefix + ".bias", bias_);
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  Tensor<T> weight_;
  Tensor<T> bias_;
};

}  // namespace mtg::nn
