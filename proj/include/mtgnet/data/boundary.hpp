#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "mtgnet/data/grid.hpp"

namespace mtg {

enum class EdgeMethod {
  /// Internal morphological gradient: mask minus its 3x3 erosion.
  kMorphological,
  /// Sobel gradient, non-maximum suppression and hysteresis on the mask.
  kCanny,
};

inline std::string to_string(EdgeMethod m) { return m == EdgeMethod::kCanny ? "canny" : "morphological"; }

inline EdgeMethod edge_method_from_string(const std::string& s) {
  if (s == "canny") return EdgeMethod::kCanny;
  if (s == "morphological") return EdgeMethod::kMorphological;
  throw ValidationError("unknown edge method '" + s + "' (expected canny or morphological)");
}

struct EdgeOptions {
  EdgeMethod method = EdgeMethod::kMorphological;
  double low_threshold = 0.1;
  double high_threshold = 0.3;
};

namespace detail {

/// Pixels outside the image replicate the nearest border pixel.
inline double clamped(const Grid& g, int y, int x) {
  y = std::clamp(y, 0, g.height - 1);
  x = std::clamp(x, 0, g.width - 1);
  return g.at(y, x);
}

inline Grid morphological_edges(const Grid& mask) {
  Grid out(mask.height, mask.width);
  for (int y = 1; y + 1 < mask.height; ++y)
    for (int x = 1; x + 1 < mask.width; ++x) {
      if (mask.at(y, x) < 0.5) continue;
      bool eroded_away = false;
      for (int dy = -1; dy <= 1 && !eroded_away; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (clamped(mask, y + dy, x + dx) < 0.5) {
            eroded_away = true;
            break;
          }
      if (eroded_away) out.at(y, x) = 1.0;
    }
  return out;
}

inline Grid canny_edges(const Grid& mask, double low, double high) {
  const int h = mask.height, w = mask.width;
  Grid mag(h, w), gx(h, w), gy(h, w);
  // A unit step seen by a Sobel kernel has magnitude 4.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto v = [&](int dy, int dx) { return clamped(mask, y + dy, x + dx); };
      const double sx = (v(-1, 1) + 2 * v(0, 1) + v(1, 1)) - (v(-1, -1) + 2 * v(0, -1) + v(1, -1));
      const double sy = (v(1, -1) + 2 * v(1, 0) + v(1, 1)) - (v(-1, -1) + 2 * v(-1, 0) + v(-1, 1));
      gx.at(y, x) = sx;
      gy.at(y, x) = sy;
      mag.at(y, x) = std::hypot(sx, sy) / 4.0;
    }
  // Non-maximum suppression along the quantised gradient direction. The
  // gradient points into the mask; on a flat plateau the pixel further along
  // the gradient wins, which keeps the edge on the foreground side.
  Grid thin(h, w);
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x) {
      const double m = mag.at(y, x);
      if (m <= 0) continue;
      double angle = std::atan2(gy.at(y, x), gx.at(y, x)) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 180.0;
      int dy = 0, dx = 0;
      if (angle < 22.5 || angle >= 157.5) dx = 1;
      else if (angle < 67.5) dy = 1, dx = 1;
      else if (angle < 112.5) dy = 1;
      else dy = 1, dx = -1;
      // Orient the step along the signed gradient.
      const double proj = dx * gx.at(y, x) + dy * gy.at(y, x);
      if (proj < 0) dy = -dy, dx = -dx;
      const double ahead = mag.at(y + dy, x + dx);
      const double behind = mag.at(y - dy, x - dx);
      // Two foreground pixels on a plateau (blobs two pixels thick) both survive.
      const bool fg_tie = m == ahead && mask.at(y, x) > 0.5 && mask.at(y + dy, x + dx) > 0.5;
      if (m >= behind && (m > ahead || fg_tie)) thin.at(y, x) = m;
    }
  Grid out(h, w);
  std::vector<int> stack;
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x)
      if (thin.at(y, x) >= high && out.at(y, x) < 0.5) {
        out.at(y, x) = 1.0;
        stack.push_back(y * w + x);
        while (!stack.empty()) {
          const int p = stack.back();
          stack.pop_back();
          const int py = p / w, px = p % w;
          for (int ddy = -1; ddy <= 1; ++ddy)
            for (int ddx = -1; ddx <= 1; ++ddx) {
              const int ny = py + ddy, nx = px + ddx;
              if (ny < 1 || nx < 1 || ny + 1 >= h || nx + 1 >= w) continue;
              if (out.at(ny, nx) > 0.5 || thin.at(ny, nx) < low) continue;
              out.at(ny, nx) = 1.0;
              stack.push_back(ny * w + nx);
            }
        }
      }
  return out;
}

}  // namespace detail

/// Boundary map of a binary region mask. Image-border pixels are never
/// marked, so a full-frame mask yields an empty map.
inline Grid boundary_from_mask(const Grid& region_mask, const EdgeOptions& opts = {}) {
  require_binary(region_mask, "boundary_from_mask input");
  if (region_mask.height < 3 || region_mask.width < 3) return Grid(region_mask.height, region_mask.width);
  if (opts.method == EdgeMethod::kCanny)
    return detail::canny_edges(region_mask, opts.low_threshold, opts.high_threshold);
  return detail::morphological_edges(region_mask);
}

/// Morphological gradient band (3x3 dilation minus 3x3 erosion): the pixels
/// on either side of the mask contour. Any boundary map is a subset of it.
inline Grid edge_band(const Grid& mask) {
  Grid out(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      double lo = 1.0, hi = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const double v = detail::clamped(mask, y + dy, x + dx);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      out.at(y, x) = hi - lo;
    }
  return out;
}

}  // namespace mtg
