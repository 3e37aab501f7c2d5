#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mtgnet/core/rng.hpp"
#include "mtgnet/data/boundary.hpp"
#include "mtgnet/data/grid.hpp"
#include "mtgnet/data/sdf.hpp"

namespace mtg {

/// One training example with its derived boundary and shape targets.
struct SampleRecord {
  std::string id;
  Grid image;
  Grid region_mask;
  Grid vessel_mask;
  Grid boundary_map;
  Grid shape_map;

  int height() const { return image.height; }
  int width() const { return image.width; }
};

/// Fills boundary_map and shape_map from region_mask.
inline void derive_targets(SampleRecord& s, const EdgeOptions& edges = {}, const SdfOptions& sdf = {}) {
  s.boundary_map = boundary_from_mask(s.region_mask, edges);
  s.shape_map = sdf_from_mask(s.region_mask, sdf);
}

/// Knobs of the synthetic lesion generator.
struct SynthSpec {
  int image_size = 64;
  int n_blobs = 1;
  /// Target fraction of lesion pixels covered by vessels.
  double vessel_density = 0.3;
  /// Standard deviation of additive Gaussian noise.
  double noise_level = 0.05;
  /// 0 disables projection-artifact streaks; 1 is heavy.
  double artifact_level = 0.5;
};

inline void validate(const SynthSpec& spec) {
  if (spec.image_size < 32) throw ValidationError("synthetic image_size must be >= 32");
  if (spec.n_blobs < 1) throw ValidationError("synthetic n_blobs must be >= 1");
  if (!(spec.vessel_density >= 0.0 && spec.vessel_density <= 1.0))
    throw ValidationError("synthetic vessel_density must lie in [0, 1]");
  if (!(spec.noise_level >= 0.0)) throw ValidationError("synthetic noise_level must be >= 0");
  if (!(spec.artifact_level >= 0.0 && spec.artifact_level <= 1.0))
    throw ValidationError("synthetic artifact_level must lie in [0, 1]");
}

namespace detail {

struct StarBlob {
  double cy, cx, r0;
  std::vector<double> amp, phase;

  double radius(double theta) const {
    double r = 1.0;
    for (std::size_t j = 0; j < amp.size(); ++j) r += amp[j] * std::cos(static_cast<double>(j + 2) * theta + phase[j]);
    return r0 * r;
  }

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    return std::hypot(dy, dx) < radius(std::atan2(dy, dx));
  }
};

inline StarBlob random_blob(Rng& rng, double cy, double cx, double r0) {
  StarBlob b{cy, cx, r0, {}, {}};
  for (int j = 0; j < 4; ++j) {
    b.amp.push_back(rng.uniform(-0.11, 0.11));
    b.phase.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
  }
  return b;
}

/// Raises pixels within `radius` of (cy, cx) to `value`, optionally only
/// where `clip` is set. Returns how many pixels went from below to `value`.
inline int stamp_disk(Grid& g, double cy, double cx, double radius, double value, const Grid* clip = nullptr) {
  const int y0 = static_cast<int>(std::floor(cy - radius)), y1 = static_cast<int>(std::ceil(cy + radius));
  const int x0 = static_cast<int>(std::floor(cx - radius)), x1 = static_cast<int>(std::ceil(cx + radius));
  int added = 0;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (!g.inside(y, x) || std::hypot(y - cy, x - cx) > radius) continue;
      if (clip && clip->at(y, x) < 0.5) continue;
      if (g.at(y, x) < value) {
        g.at(y, x) = value;
        ++added;
      }
    }
  return added;
}

inline Grid box_blur3(const Grid& g) {
  Grid out(g.height, g.width);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      double s = 0, wsum = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!g.inside(y + dy, x + dx)) continue;
          const double wt = (dy == 0 ? 2.0 : 1.0) * (dx == 0 ? 2.0 : 1.0);
          s += wt * g.at(y + dy, x + dx);
          wsum += wt;
        }
      out.at(y, x) = s / wsum;
    }
  return out;
}

}  // namespace detail

/// Deterministic synthetic en-face sample: an irregular lesion region with an
/// internal branching vessel tree, textured background, speckle noise and
/// bright projection-artifact streaks placed outside the lesion.
inline SampleRecord generate_synthetic_sample(std::uint64_t seed, const SynthSpec& spec = {}) {
  validate(spec);
  Rng rng(derive_seed({0x5157u, seed}));
  const int n = spec.image_size;
  const double size = static_cast<double>(n);

  // Region: union of star-shaped blobs, reduced to the component holding the centre.
  const double cy = (size - 1) / 2 + rng.uniform(-0.08, 0.08) * size;
  const double cx = (size - 1) / 2 + rng.uniform(-0.08, 0.08) * size;
  const double r0 = rng.uniform(0.17, 0.27) * size;
  std::vector<detail::StarBlob> blobs{detail::random_blob(rng, cy, cx, r0)};
  for (int b = 1; b < spec.n_blobs; ++b) {
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double off = r0 * rng.uniform(0.5, 0.9);
    blobs.push_back(detail::random_blob(rng, cy + off * std::sin(ang), cx + off * std::cos(ang), r0 * rng.uniform(0.45, 0.7)));
  }
  Grid region(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (const auto& b : blobs)
        if (b.contains(y, x)) {
          region.at(y, x) = 1.0;
          break;
        }
  region = component_at(region, static_cast<int>(std::lround(cy)), static_cast<int>(std::lround(cx)));

  // Vessel tree: random-walk branches seeded from the centre and from
  // existing vessel pixels, grown until the target coverage is reached.
  Grid vessel(n, n);
  const double region_area = std::max(1.0, region.sum());
  const double target = spec.vessel_density * region_area;
  double covered = 0.0;
  std::vector<std::pair<double, double>> vessel_points{{cy, cx}};
  const int max_branches = 400;
  for (int branch = 0; branch < max_branches && covered < target; ++branch) {
    auto [py, px] = vessel_points[rng.below(vessel_points.size())];
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double radius = rng.uniform(0.9, 1.4);
    const int steps = static_cast<int>(rng.uniform(0.3, 0.8) * r0);
    for (int s = 0; s < steps && covered < target; ++s) {
      heading += rng.normal(0.0, 0.25);
      py += std::sin(heading);
      px += std::cos(heading);
      const int iy = static_cast<int>(std::lround(py)), ix = static_cast<int>(std::lround(px));
      if (!region.inside(iy, ix) || region.at(iy, ix) < 0.5) break;
      covered += detail::stamp_disk(vessel, py, px, radius, 1.0, &region);
      vessel_points.emplace_back(py, px);
    }
  }

  // Intensities.
  Grid image(n, n);
  std::vector<double> fy(3), fx(3), ph(3);
  for (int k = 0; k < 3; ++k) {
    fy[k] = rng.uniform(0.5, 3.0) * 2 * std::numbers::pi / size;
    fx[k] = rng.uniform(0.5, 3.0) * 2 * std::numbers::pi / size;
    ph[k] = rng.uniform(0.0, 2 * std::numbers::pi);
  }
  const double lesion_level = rng.uniform(0.28, 0.36);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double v = 0.12;
      for (int k = 0; k < 3; ++k) v += 0.025 * std::sin(fy[k] * y + fx[k] * x + ph[k]);
      if (region.at(y, x) > 0.5) v = lesion_level;
      if (vessel.at(y, x) > 0.5) v = 0.85;
      image.at(y, x) = v;
    }

  // Artifacts: bright streaks that never enter the lesion.
  const int n_streaks = static_cast<int>(std::lround(spec.artifact_level * 4.0));
  for (int s = 0; s < n_streaks; ++s) {
    const double ang = rng.uniform(0.0, std::numbers::pi);
    const double oy = rng.uniform(0.0, size), ox = rng.uniform(0.0, size);
    const double width = rng.uniform(0.6, 1.3);
    const double level = 0.35 + 0.4 * spec.artifact_level;
    const double len = rng.uniform(0.3, 0.7) * size;
    Grid streak(n, n);
    for (double t = -len / 2; t <= len / 2; t += 0.5)
      detail::stamp_disk(streak, oy + t * std::sin(ang), ox + t * std::cos(ang), width, level);
    for (std::size_t i = 0; i < image.size(); ++i)
      if (region.data[i] < 0.5) image.data[i] = std::max(image.data[i], streak.data[i]);
  }

  image = detail::box_blur3(image);
  for (double& v : image.data) v = std::clamp(v + rng.normal(0.0, spec.noise_level), 0.0, 1.0);

  SampleRecord rec;
  rec.id = "synth_" + std::to_string(seed);
  rec.image = std::move(image);
  rec.region_mask = std::move(region);
  rec.vessel_mask = std::move(vessel);
  derive_targets(rec);
  return rec;
}

}  // namespace mtg
