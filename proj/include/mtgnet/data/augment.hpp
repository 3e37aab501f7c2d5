#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "mtgnet/core/rng.hpp"
#include "mtgnet/data/synth.hpp"

namespace mtg {

/// A geometric transform about the image centre: optional horizontal mirror,
/// then rotation by `angle_deg` (counter-clockwise in image coordinates).
struct RigidTransform {
  double angle_deg = 0.0;
  bool flip = false;

  bool is_identity() const { return angle_deg == 0.0 && !flip; }
};

/// Resamples `g` under `t` with bilinear interpolation; pixels mapped from
/// outside the frame read as `fill`.
inline Grid warp(const Grid& g, const RigidTransform& t, double fill = 0.0) {
  if (t.is_identity()) return g;
  Grid out(g.height, g.width);
  const double cy = (g.height - 1) / 2.0, cx = (g.width - 1) / 2.0;
  const double a = t.angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  auto sample = [&](int y, int x) { return g.inside(y, x) ? g.at(y, x) : fill; };
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      // Inverse map: undo the rotation, then the mirror.
      const double dy = y - cy, dx = x - cx;
      double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      if (t.flip) sx = (g.width - 1) - sx;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      out.at(y, x) = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                     fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
    }
  return out;
}

/// Warps a binary mask and re-binarises at 0.5.
inline Grid warp_mask(const Grid& mask, const RigidTransform& t) {
  if (t.is_identity()) return mask;
  return threshold(warp(mask, t), 0.5);
}

/// Applies `t` to the image and masks; boundary and shape targets are
/// re-derived from the warped region mask rather than warped themselves.
inline SampleRecord transform_sample(const SampleRecord& s, const RigidTransform& t, const EdgeOptions& edges = {},
                                     const SdfOptions& sdf = {}) {
  if (t.is_identity()) return s;
  SampleRecord out;
  out.id = s.id;
  out.image = warp(s.image, t);
  out.region_mask = warp_mask(s.region_mask, t);
  out.vessel_mask = warp_mask(s.vessel_mask, t);
  derive_targets(out, edges, sdf);
  return out;
}

/// Random mirror (p = 0.5) and rotation uniform in [-max_angle, max_angle].
inline RigidTransform random_transform(std::uint64_t seed, double max_angle_deg = 45.0) {
  Rng rng(derive_seed({0xa46u, seed}));
  RigidTransform t;
  t.flip = rng.bernoulli(0.5);
  t.angle_deg = rng.uniform(-max_angle_deg, max_angle_deg);
  return t;
}

inline SampleRecord augment(const SampleRecord& s, std::uint64_t seed, double max_angle_deg = 45.0,
                            const EdgeOptions& edges = {}, const SdfOptions& sdf = {}) {
  return transform_sample(s, random_transform(seed, max_angle_deg), edges, sdf);
}

}  // namespace mtg
