#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtgnet/data/array_io.hpp"
#include "mtgnet/data/png_io.hpp"
#include "mtgnet/data/synth.hpp"
#include "mtgnet/eval/metrics.hpp"
#include "mtgnet/loss/uncertainty.hpp"

namespace mtg {

/// Stacks equally sized grids into an (N, 1, H, W) tensor.
template <typename T>
Tensor<T> stack_grids(const std::vector<const Grid*>& grids) {
  if (grids.empty()) throw ValidationError("stack_grids needs at least one grid");
  const int h = grids.front()->height, w = grids.front()->width;
  std::vector<T> v;
  v.reserve(grids.size() * static_cast<std::size_t>(h) * w);
  for (const Grid* g : grids) {
    if (g->height != h || g->width != w) throw ShapeError("stack_grids: grids differ in size");
    for (double x : g->data) v.push_back(static_cast<T>(x));
  }
  return Tensor<T>::from(Shape{static_cast<int>(grids.size()), 1, h, w}, std::move(v));
}

/// Sample `s` of an (N, 1, H, W) tensor as a grid.
template <typename T>
Grid grid_of(const Tensor<T>& t, int s) {
  const int h = t.dim(2), w = t.dim(3);
  Grid g(h, w);
  const std::size_t off = static_cast<std::size_t>(s) * h * w;
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = static_cast<double>(t.values()[off + i]);
  return g;
}

inline Grid grid_from_values(const std::vector<double>& v, int s, int h, int w) {
  Grid g(h, w);
  std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(s) * h * w, static_cast<std::size_t>(h) * w, g.data.begin());
  return g;
}

struct PredictOptions {
  int batch = 4;
  /// MC-Dropout passes for the uncertainty maps; 0 skips them.
  int mc_samples = 0;
  std::uint64_t seed = 0;
  double threshold = 0.5;
};

/// Deterministic cascade outputs (dropout off, hard region mask) plus
/// optional MC variance maps. Probabilities are at the input resolution.
struct Prediction {
  Grid region_prob, vessel_prob, boundary_prob, shape_map;
  Grid region_mask, vessel_mask, vessel_input;
  bool has_uncertainty = false;
  Grid region_variance, vessel_variance, boundary_variance, shape_variance;
};

template <typename T>
std::vector<Prediction> predict(MtgNet<T>& model, const std::vector<const Grid*>& images, const PredictOptions& opts = {}) {
  if (opts.batch < 1) throw ValidationError("predict: batch must be >= 1");
  std::vector<Prediction> out;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(opts.batch)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(opts.batch));
    const std::vector<const Grid*> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                         images.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor<T> x = stack_grids<T>(chunk);
    NoGradGuard no_grad;
    const CascadeOutput<T> o = model.forward(x, CascadeMode::kInfer, {});
    TaskUncertainty u;
    if (opts.mc_samples > 0)
      u = summarize_samples(mc_sample(model, x, opts.mc_samples, derive_seed({opts.seed, start})));
    const int h = x.dim(2), w = x.dim(3);
    for (int s = 0; s < static_cast<int>(chunk.size()); ++s) {
      Prediction p;
      p.region_prob = grid_of(o.region_prob, s);
      p.vessel_prob = grid_of(o.vessel_prob, s);
      if (o.boundary_prob.defined()) p.boundary_prob = grid_of(o.boundary_prob, s);
      if (o.shape_map.defined()) p.shape_map = grid_of(o.shape_map, s);
      p.vessel_input = grid_of(o.vessel_input, s);
      p.region_mask = threshold(p.region_prob, opts.threshold);
      // Vessels are only reported inside the predicted lesion.
      p.vessel_mask = mask_and(threshold(p.vessel_prob, opts.threshold), p.region_mask);
      if (opts.mc_samples > 0) {
        p.has_uncertainty = true;
        p.region_variance = grid_from_values(u.region.variance, s, h, w);
        p.vessel_variance = grid_from_values(u.vessel.variance, s, h, w);
        if (!u.boundary.variance.empty()) p.boundary_variance = grid_from_values(u.boundary.variance, s, h, w);
        if (!u.shape.variance.empty()) p.shape_variance = grid_from_values(u.shape.variance, s, h, w);
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

/// Per-image metrics of one prediction against its ground truth.
struct SampleMetrics {
  std::string id;
  MetricsRecord region, vessel;
};

inline SampleMetrics score_prediction(const std::string& id, const Prediction& p, const SampleRecord& truth) {
  SampleMetrics m;
  m.id = id;
  m.region = confusion_metrics(p.region_mask, truth.region_mask);
  m.vessel = confusion_metrics(p.vessel_mask, truth.vessel_mask);
  const ClinicalMetrics c = clinical_metrics(p.region_mask, p.vessel_mask);
  for (MetricsRecord* r : {&m.region, &m.vessel}) {
    r->lesion_area_px = c.lesion_area_px;
    r->vessel_density = c.vessel_density;
    r->avascular_area_px = c.avascular_area_px;
  }
  return m;
}

template <typename T>
std::vector<SampleMetrics> evaluate_samples(MtgNet<T>& model, const std::vector<SampleRecord>& samples, int batch = 4) {
  std::vector<const Grid*> images;
  for (const auto& s : samples) images.push_back(&s.image);
  const auto preds = predict(model, images, {.batch = batch});
  std::vector<SampleMetrics> out;
  for (std::size_t i = 0; i < samples.size(); ++i) out.push_back(score_prediction(samples[i].id, preds[i], samples[i]));
  return out;
}

/// Maps [lo, hi] onto a blue-to-red colour ramp (8-bit RGB).
inline std::vector<std::uint8_t> heatmap_rgb(const Grid& g, double lo, double hi) {
  std::vector<std::uint8_t> px;
  px.reserve(g.size() * 3);
  const double span = hi > lo ? hi - lo : 1.0;
  for (double v : g.data) {
    const double t = std::clamp((v - lo) / span, 0.0, 1.0);
    const double r = std::clamp(1.5 - std::abs(4 * t - 3), 0.0, 1.0);
    const double gg = std::clamp(1.5 - std::abs(4 * t - 2), 0.0, 1.0);
    const double b = std::clamp(1.5 - std::abs(4 * t - 1), 0.0, 1.0);
    px.push_back(to_byte(r));
    px.push_back(to_byte(gg));
    px.push_back(to_byte(b));
  }
  return px;
}

inline void write_heatmap(const std::string& path, const Grid& g, double lo, double hi) {
  write_png(path, g.width, g.height, 3, heatmap_rgb(g, lo, hi));
}

/// Writes masks and probability maps as PNG, probabilities and variances as
/// float arrays, and variance heatmaps scaled to the 0.25 bound.
inline void write_prediction(const std::filesystem::path& dir, const std::string& id, const Prediction& p) {
  std::filesystem::create_directories(dir);
  const auto base = [&](const std::string& what) { return (dir / (id + "_" + what)).string(); };
  write_png_gray(base("region_mask.png"), p.region_mask);
  write_png_gray(base("vessel_mask.png"), p.vessel_mask);
  write_png_gray(base("region_prob.png"), p.region_prob);
  write_png_gray(base("vessel_prob.png"), p.vessel_prob);
  save_grid(base("region_prob"), p.region_prob);
  save_grid(base("vessel_prob"), p.vessel_prob);
  if (!p.has_uncertainty) return;
  save_grid(base("region_variance"), p.region_variance);
  save_grid(base("vessel_variance"), p.vessel_variance);
  write_heatmap(base("region_variance.png"), p.region_variance, 0.0, 0.25);
  write_heatmap(base("vessel_variance.png"), p.vessel_variance, 0.0, 0.25);
}

}  // namespace mtg
