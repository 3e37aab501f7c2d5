#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mtgnet/model/backbone.hpp"
#include "mtgnet/model/migr.hpp"
#include "mtgnet/model/mrgr.hpp"

namespace mtg {

/// Component toggles of one ablation variant.
struct Variant {
  std::string name = "M*3";
  bool boundary_task = true;
  bool shape_task = true;
  bool uce = true;
  bool graph = true;

  void validate() const {
    if (shape_task && !boundary_task) throw ValidationError("the shape task requires the boundary task");
    if (graph && !boundary_task) throw ValidationError("graph reasoning requires the boundary task");
  }
};

inline std::vector<std::string> variant_names() { return {"M0", "M1", "M2", "M3", "M*1", "M*2", "M*3"}; }

/// M0 bare backbone; M1 +boundary; M2 +shape; M3 +uncertainty loss; M*k adds
/// the graph modules to Mk.
inline Variant variant_from_name(const std::string& name) {
  if (name == "M0") return {name, false, false, false, false};
  if (name == "M1") return {name, true, false, false, false};
  if (name == "M2") return {name, true, true, false, false};
  if (name == "M3") return {name, true, true, true, false};
  if (name == "M*1") return {name, true, false, false, true};
  if (name == "M*2") return {name, true, true, false, true};
  if (name == "M*3") return {name, true, true, true, true};
  throw ValidationError("unknown variant '" + name + "' (expected M0, M1, M2, M3, M*1, M*2 or M*3)");
}

struct ModelConfig {
  BackboneConfig backbone;
  GraphConfig graph;
  Variant variant;

  void validate() const {
    backbone.validate();
    graph.validate();
    variant.validate();
  }
};

enum class CascadeMode {
  /// Soft region mask; gradients flow from the vessel branch into the region branch.
  kTrain,
  /// Region probability thresholded at 0.5 before masking.
  kInfer,
};

template <typename T>
struct RegionOutput {
  Tensor<T> region_logits, region_prob;
  Tensor<T> boundary_logits, boundary_prob;  // undefined without the boundary task
  Tensor<T> shape_map;                       // in [-1, 1]; undefined without the shape task
  HeadMaps<T> heads;                         // only with graph reasoning
};

template <typename T>
struct CascadeOutput : RegionOutput<T> {
  Tensor<T> vessel_input;
  Tensor<T> vessel_logits, vessel_prob;
};

/// Region branch (encoder, routing, MIGR, MRGR, task decoders) cascaded into
/// an independent vessel encoder-decoder on the masked image.
template <typename T>
class MtgNet {
 public:
  MtgNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(derive_seed({0x3d7u, seed}));
    const auto& bb = cfg.backbone;
    const int c = bb.routed_channels;
    const auto widths = encoder_widths<T>(bb);
    const std::array<int, 5> aux{bb.aux_decoder_width, bb.aux_decoder_width, bb.aux_decoder_width,
                                 bb.aux_decoder_width, bb.aux_decoder_width};
    encoder_ = Encoder<T>(bb, rng);
    routing_ = FeatureRouting<T>(bb, rng);
    if (cfg.variant.graph) {
      migr_ = Migr<T>(c, cfg.graph, cfg.variant.shape_task, rng);
      mrgr_ = Mrgr<T>(c, cfg.graph, cfg.variant.shape_task, rng);
    }
    region_decoder_ = Decoder<T>(c, widths, bb, rng);
    if (cfg.variant.boundary_task) boundary_decoder_ = Decoder<T>(c, aux, bb, rng);
    if (cfg.variant.shape_task) shape_decoder_ = Decoder<T>(c, aux, bb, rng);
    vessel_encoder_ = Encoder<T>(bb, rng);
    vessel_decoder_ = Decoder<T>(bb.width(5), widths, bb, rng);
    collect_all();
  }

  MtgNet(const MtgNet&) = delete;
  MtgNet& operator=(const MtgNet&) = delete;

  RegionOutput<T> forward_region(const Tensor<T>& image, const nn::ForwardContext& ctx) {
    const Taps<T> taps = encoder_(image, ctx);
    RoutedFeatures<T> f = routing_(taps, ctx);
    RegionOutput<T> out;
    Tensor<T> reg = f.region, bou = f.boundary, shp = f.shape;
    if (cfg_.variant.graph) {
      const MigrOutput<T> g = migr_(f.region, f.boundary, f.shape);
      const MrgrOutput<T> r = mrgr_(g.region, g.boundary, g.shape);
      reg = r.region;
      bou = g.boundary;
      shp = g.shape;
      out.heads = r.heads;
    }
    const int h = image.dim(2), w = image.dim(3);
    out.region_logits = region_decoder_(reg, taps, ctx);
    out.region_prob = ops::sigmoid(out.region_logits);
    if (cfg_.variant.boundary_task) {
      out.boundary_logits = boundary_decoder_(bou, taps, ctx);
      if (out.heads.boundary_logits.defined())
        out.boundary_logits = ops::add(out.boundary_logits, ops::resize_bilinear(out.heads.boundary_logits, h, w));
      out.boundary_prob = ops::sigmoid(out.boundary_logits);
    }
    if (cfg_.variant.shape_task) {
      Tensor<T> logits = shape_decoder_(shp, taps, ctx);
      if (out.heads.shape_logits.defined())
        logits = ops::add(logits, ops::resize_bilinear(out.heads.shape_logits, h, w));
      out.shape_map = ops::add_scalar(ops::scale(ops::sigmoid(logits), T(2)), T(-1));
    }
    return out;
  }

  /// Vessel branch on the image masked by `region_prob`.
  std::pair<Tensor<T>, Tensor<T>> forward_vessel(const Tensor<T>& image, const Tensor<T>& region_prob, CascadeMode mode,
                                                 const nn::ForwardContext& ctx, Tensor<T>* masked_out = nullptr) {
    const Tensor<T> masked = mask_image(image, region_prob, mode == CascadeMode::kInfer);
    if (masked_out) *masked_out = masked;
    const Taps<T> taps = vessel_encoder_(masked, ctx);
    Tensor<T> logits = vessel_decoder_(taps[4], taps, ctx);
    return {logits, ops::sigmoid(logits)};
  }

  CascadeOutput<T> forward(const Tensor<T>& image, CascadeMode mode, const nn::ForwardContext& ctx) {
    CascadeOutput<T> out;
    static_cast<RegionOutput<T>&>(out) = forward_region(image, ctx);
    auto [vl, vp] = forward_vessel(image, out.region_prob, mode, ctx, &out.vessel_input);
    out.vessel_logits = vl;
    out.vessel_prob = vp;
    return out;
  }

  /// Places the graph centres on pixel features of a representative batch.
  void seed_graph_centers(const Tensor<T>& image, std::uint64_t seed) {
    if (!cfg_.variant.graph) return;
    NoGradGuard no_grad;
    Rng rng(derive_seed({0xce17u, seed}));
    nn::ForwardContext ctx;  // running statistics, no dropout
    const Taps<T> taps = encoder_(image, ctx);
    const RoutedFeatures<T> f = routing_(taps, ctx);
    migr_.seed_centers(f.region, f.boundary, f.shape, rng);
    const MigrOutput<T> g = migr_(f.region, f.boundary, f.shape);
    mrgr_.seed_centers(g.region, g.boundary, g.shape, rng);
  }

  nn::ParameterSet<T>& parameters() { return params_; }
  const ModelConfig& config() const { return cfg_; }

  Encoder<T>& encoder() { return encoder_; }
  FeatureRouting<T>& routing() { return routing_; }
  Migr<T>& migr() { return migr_; }
  Mrgr<T>& mrgr() { return mrgr_; }

 private:
  void collect_all() {
    encoder_.collect(params_, "region.encoder");
    routing_.collect(params_, "region.routing");
    if (cfg_.variant.graph) {
      migr_.collect(params_, "region.migr");
      mrgr_.collect(params_, "region.mrgr");
    }
    region_decoder_.collect(params_, "region.decoder");
    if (cfg_.variant.boundary_task) boundary_decoder_.collect(params_, "boundary.decoder");
    if (cfg_.variant.shape_task) shape_decoder_.collect(params_, "shape.decoder");
    vessel_encoder_.collect(params_, "vessel.encoder");
    vessel_decoder_.collect(params_, "vessel.decoder");
  }

  ModelConfig cfg_;
  Encoder<T> encoder_;
  FeatureRouting<T> routing_;
  Migr<T> migr_;
  Mrgr<T> mrgr_;
  Decoder<T> region_decoder_, boundary_decoder_, shape_decoder_;
  Encoder<T> vessel_encoder_;
  Decoder<T> vessel_decoder_;
  nn::ParameterSet<T> params_;
};

}  // namespace mtg
