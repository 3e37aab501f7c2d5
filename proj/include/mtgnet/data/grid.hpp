#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "mtgnet/core/error.hpp"

namespace mtg {

/// Dense H x W image of reals, row-major. Binary masks use 0.0 / 1.0.
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Grid() = default;
  Grid(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {
    if (h < 0 || w < 0) throw ShapeError("negative grid size");
  }

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool inside(int y, int x) const { return y >= 0 && y < height && x >= 0 && x < width; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Grid& o) const { return height == o.height && width == o.width; }
  bool operator==(const Grid& o) const = default;

  double sum() const {
    double s = 0;
    for (double v : data) s += v;
    return s;
  }
};

inline bool is_binary(const Grid& g) {
  return std::all_of(g.data.begin(), g.data.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

inline void require_binary(const Grid& g, const char* what) {
  if (!is_binary(g)) throw ValidationError(std::string(what) + " must be binary {0,1}");
}

inline void require_same_shape(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
}

inline Grid threshold(const Grid& g, double t) {
  Grid out(g.height, g.width);
  for (std::size_t i = 0; i < g.size(); ++i) out.data[i] = g.data[i] >= t ? 1.0 : 0.0;
  return out;
}

inline Grid mask_and(const Grid& a, const Grid& b) {
  require_same_shape(a, b, "mask_and");
  Grid out(a.height, a.width);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = (a.data[i] > 0.5 && b.data[i] > 0.5) ? 1.0 : 0.0;
  return out;
}

/// Number of 4-connected foreground components.
inline int count_components(const Grid& mask) {
  std::vector<char> seen(mask.size(), 0);
  int components = 0;
  std::vector<int> stack;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * mask.width + x;
      if (mask.data[i] < 0.5 || seen[i]) continue;
      ++components;
      stack.push_back(static_cast<int>(i));
      seen[i] = 1;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int py = p / mask.width, px = p % mask.width;
        const int ny[4] = {py - 1, py + 1, py, py};
        const int nx[4] = {px, px, px - 1, px + 1};
        for (int k = 0; k < 4; ++k) {
          if (!mask.inside(ny[k], nx[k])) continue;
          const std::size_t j = static_cast<std::size_t>(ny[k]) * mask.width + nx[k];
          if (mask.data[j] > 0.5 && !seen[j]) {
            seen[j] = 1;
            stack.push_back(static_cast<int>(j));
          }
        }
      }
    }
  return components;
}

/// The 4-connected component containing (y, x); empty grid if that pixel is background.
inline Grid component_at(const Grid& mask, int y, int x) {
  Grid out(mask.height, mask.width);
  if (!mask.inside(y, x) || mask.at(y, x) < 0.5) return out;
  std::vector<int> stack{y * mask.width + x};
  out.at(y, x) = 1.0;
  while (!stack.empty()) {
    const int p = stack.back();
    stack.pop_back();
    const int py = p / mask.width, px = p % mask.width;
    const int ny[4] = {py - 1, py + 1, py, py};
    const int nx[4] = {px, px, px - 1, px + 1};
    for (int k = 0; k < 4; ++k) {
      if (!mask.inside(ny[k], nx[k]) || mask.at(ny[k], nx[k]) < 0.5 || out.at(ny[k], nx[k]) > 0.5) continue;
      out.at(ny[k], nx[k]) = 1.0;
      stack.push_back(ny[k] * mask.width + nx[k]);
    }
  }
  return out;
}

/// Bilinear resample to a new size (half-pixel centres).
inline Grid resize_bilinear(const Grid& g, int out_h, int out_w) {
  if (g.height == out_h && g.width == out_w) return g;
  Grid out(out_h, out_w);
  const double sy = static_cast<double>(g.height) / out_h, sx = static_cast<double>(g.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    int y0 = std::min(static_cast<int>(fy), g.height - 1);
    int y1 = std::min(y0 + 1, g.height - 1);
    double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      int x0 = std::min(static_cast<int>(fx), g.width - 1);
      int x1 = std::min(x0 + 1, g.width - 1);
      double wx = fx - x0;
      out.at(y, x) = (1 - wy) * ((1 - wx) * g.at(y0, x0) + wx * g.at(y0, x1)) +
                     wy * ((1 - wx) * g.at(y1, x0) + wx * g.at(y1, x1));
    }
  }
  return out;
}

/// Nearest-neighbour resample; keeps masks binary.
inline Grid resize_nearest(const Grid& g, int out_h, int out_w) {
  if (g.height == out_h && g.width == out_w) return g;
  Grid out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(g.height - 1, static_cast<int>((y + 0.5) * g.height / out_h));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(g.width - 1, static_cast<int>((x + 0.5) * g.width / out_w));
      out.at(y, x) = g.at(sy, sx);
    }
  }
  return out;
}

}  // namespace mtg
