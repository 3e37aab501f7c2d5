#pragma once

#include <array>
#include <string>
#include <vector>

#include "mtgnet/core/error.hpp"
#include "mtgnet/core/ops.hpp"
#include "mtgnet/nn/layers.hpp"

namespace mtg {

struct BackboneConfig {
  int depth = 5;
  int base_channels = 16;
  /// Dilation of the inner convolutions of each nested block, shallow to deep.
  std::vector<int> nested_dilations{3, 3, 2, 2, 2};
  /// Dropout on the three deepest encoder levels and the three deepest decoder stages.
  double dropout_rate = 0.5;
  /// Common channel width C after feature routing.
  int routed_channels = 64;
  /// Encoder widths grow as base * 2^(k-1) and are capped at base * width_cap.
  int width_cap = 4;
  /// Width of every stage of the boundary and shape decoders.
  int aux_decoder_width = 8;
  int in_channels = 1;

  int width(int level) const {
    const int mult = std::min(1 << (level - 1), width_cap);
    return base_channels * mult;
  }

  void validate() const {
    if (depth != 5) throw ValidationError("backbone depth must be 5");
    if (nested_dilations.size() != 5) throw ValidationError("nested_dilations needs one entry per level (5)");
    for (int d : nested_dilations)
      if (d < 1) throw ValidationError("nested dilations must be >= 1");
    if (base_channels < 2) throw ValidationError("base_channels must be >= 2");
    if (routed_channels < 1) throw ValidationError("routed_channels must be >= 1");
    if (width_cap < 1) throw ValidationError("width_cap must be >= 1");
    if (aux_decoder_width < 1) throw ValidationError("aux_decoder_width must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ValidationError("dropout_rate must lie in [0, 1)");
  }
};

inline void require_divisible_input(int h, int w) {
  if (h <= 0 || w <= 0 || h % 16 != 0 || w % 16 != 0)
    throw ShapeError("input size " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by 16 (five levels at strides 1, 2, 4, 8, 16)");
}

/// Five encoder taps L1..L5, shallow to deep.
template <typename T>
using Taps = std::array<Tensor<T>, 5>;

/// Two-level nested U block: an entry conv, a dilated inner encoder with one
/// pooling step, an inner decoder, and a residual connection to the entry.
template <typename T>
class NestedBlock {
 public:
  NestedBlock() = default;
  NestedBlock(int in_ch, int out_ch, int dilation, Rng& rng)
      : entry_(in_ch, out_ch, 1, rng),
        down_(out_ch, std::max(1, out_ch / 2), dilation, rng),
        inner_(std::max(1, out_ch / 2), std::max(1, out_ch / 2), dilation, rng),
        merge_(2 * std::max(1, out_ch / 2), out_ch, 1, rng) {}

  Tensor<T> operator()(const Tensor<T>& x, const nn::ForwardContext& ctx) {
    Tensor<T> hx = entry_(x, ctx);
    Tensor<T> a = down_(hx, ctx);
    const int h = a.dim(2), w = a.dim(3);
    Tensor<T> b;
    if (h >= 2 && w >= 2 && h % 2 == 0 && w % 2 == 0) {
      b = inner_(ops::max_pool2(a), ctx);
      b = ops::resize_bilinear(b, h, w);
    } else {
      b = inner_(a, ctx);
    }
    return ops::add(merge_(ops::concat_channels(std::vector<Tensor<T>>{a, b}), ctx), hx);
  }

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) {
    entry_.collect(ps, prefix + ".entry");
    down_.collect(ps, prefix + ".down");
    inner_.collect(ps, prefix + ".inner");
    merge_.collect(ps, prefix + ".merge");
  }

 private:
  nn::ConvBnRelu<T> entry_, down_, inner_, merge_;
};

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    int in = cfg.in_channels;
    for (int k = 1; k <= 5; ++k) {
      blocks_.emplace_back(in, cfg.width(k), cfg.nested_dilations[k - 1], rng);
      in = cfg.width(k);
    }
  }

  Taps<T> operator()(const Tensor<T>& image, const nn::ForwardContext& ctx) {
    if (image.shape().rank() != 4 || image.dim(1) != cfg_.in_channels)
      throw ShapeError("encoder expects (N, " + std::to_string(cfg_.in_channels) + ", H, W), got " + image.shape().str());
    require_divisible_input(image.dim(2), image.dim(3));
    Taps<T> taps;
    Tensor<T> x = image;
    for (int k = 0; k < 5; ++k) {
      if (k > 0) x = ops::max_pool2(x);
      x = blocks_[k](x, ctx);
      if (k >= 2) x = nn::maybe_dropout(x, ctx);
      taps[k] = x;
    }
    return taps;
  }

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) {
    for (std::size_t k = 0; k < blocks_.size(); ++k) blocks_[k].collect(ps, prefix + ".L" + std::to_string(k + 1));
  }

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  std::vector<NestedBlock<T>> blocks_;
};

/// 1x1 convolution followed by batch norm.
template <typename T>
class Router {
 public:
  Router() = default;
  Router(int in_ch, int out_ch, Rng& rng) : conv_(in_ch, out_ch, 1, 1, rng, /*bias=*/false), bn_(out_ch) {}

  Tensor<T> operator()(const std::vector<Tensor<T>>& taps, int h, int w, const nn::ForwardContext& ctx) {
    std::vector<Tensor<T>> resized;
    for (const auto& t : taps) {
      if (t.dim(0) != taps.front().dim(0)) throw ShapeError("route_features: batch dimension mismatch between taps");
      resized.push_back(ops::resize_bilinear(t, h, w));
    }
    return bn_(conv_(resized.size() == 1 ? resized.front() : ops::concat_channels(resized)), ctx);
  }

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) {
    conv_.collect(ps, prefix + ".conv");
    bn_.collect(ps, prefix + ".bn");
  }

 private:
  nn::Conv2d<T> conv_;
  nn::BatchNorm2d<T> bn_;
};

template <typename T>
struct RoutedFeatures {
  Tensor<T> boundary;  // from L2, L3, L4
  Tensor<T> shape;     // from L3, L4, L5
  Tensor<T> region;    // from L5
};

/// Builds the three task inputs at the L5 resolution.
template <typename T>
class FeatureRouting {
 public:
  FeatureRouting() = default;
  FeatureRouting(const BackboneConfig& cfg, Rng& rng)
      : bou_(cfg.width(2) + cfg.width(3) + cfg.width(4), cfg.routed_channels, rng),
        shp_(cfg.width(3) + cfg.width(4) + cfg.width(5), cfg.routed_channels, rng),
        reg_(cfg.width(5), cfg.routed_channels, rng) {}

  RoutedFeatures<T> operator()(const Taps<T>& L, const nn::ForwardContext& ctx) {
    const int h = L[4].dim(2), w = L[4].dim(3);
    return {bou_({L[1], L[2], L[3]}, h, w, ctx), shp_({L[2], L[3], L[4]}, h, w, ctx), reg_({L[4]}, h, w, ctx)};
  }

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) {
    bou_.collect(ps, prefix + ".boundary");
    shp_.collect(ps, prefix + ".shape");
    reg_.collect(ps, prefix + ".region");
  }

 private:
  Router<T> bou_, shp_, reg_;
};

/// U-Net style decoder: a stage at the deepest resolution, then four
/// upsample + skip-concat stages, then a 1x1 projection to one channel.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  /// `widths[k]` is the output width of the stage at level k + 1.
  Decoder(int in_ch, const std::array<int, 5>& widths, const BackboneConfig& cfg, Rng& rng) {
    stages_.emplace_back(in_ch, widths[4], 1, rng);
    for (int k = 3; k >= 0; --k) stages_.emplace_back(widths[k + 1] + cfg.width(k + 1), widths[k], 1, rng);
    head_ = nn::Conv2d<T>(widths[0], 1, 1, 1, rng, /*bias=*/true);
  }

  Tensor<T> operator()(const Tensor<T>& deep, const Taps<T>& skips, const nn::ForwardContext& ctx) {
    Tensor<T> x = nn::maybe_dropout(stages_[0](deep, ctx), ctx);
    for (int k = 3, s = 1; k >= 0; --k, ++s) {
      const auto& skip = skips[k];
      x = ops::resize_bilinear(x, skip.dim(2), skip.dim(3));
      x = stages_[s](ops::concat_channels(std::vector<Tensor<T>>{x, skip}), ctx);
      if (k >= 2) x = nn::maybe_dropout(x, ctx);
    }
    return head_(x);
  }

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) {
    for (std::size_t s = 0; s < stages_.size(); ++s) stages_[s].collect(ps, prefix + ".stage" + std::to_string(5 - s));
    head_.collect(ps, prefix + ".head");
  }

 private:
  std::vector<nn::ConvBnRelu<T>> stages_;
  nn::Conv2d<T> head_;
};

template <typename T>
std::array<int, 5> encoder_widths(const BackboneConfig& cfg) {
  return {cfg.width(1), cfg.width(2), cfg.width(3), cfg.width(4), cfg.width(5)};
}

/// Multiplies the image by the region probability. With `hard`, the
/// probability is thresholded at 0.5 first and no gradient reaches it.
template <typename T>
Tensor<T> mask_image(const Tensor<T>& image, const Tensor<T>& region_prob, bool hard) {
  if (image.shape() != region_prob.shape())
    throw ShapeError("mask_image: image " + image.shape().str() + " vs region " + region_prob.shape().str());
  if (!hard) return ops::mul(image, region_prob);
  std::vector<T> m(region_prob.numel());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = region_prob.values()[i] >= T(0.5) ? T(1) : T(0);
  return ops::mul(image, Tensor<T>::from(region_prob.shape(), std::move(m)));
}

}  // namespace mtg
