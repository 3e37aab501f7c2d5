#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mtgnet/data/grid.hpp"

namespace mtg {

namespace detail {

/// Exact 1-D squared distance transform (lower envelope of parabolas).
inline void edt_1d(const double* f, int n, double* d, std::vector<int>& v, std::vector<double>& z) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  v.assign(static_cast<std::size_t>(n), 0);
  z.assign(static_cast<std::size_t>(n) + 1, 0.0);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s = 0;
    while (true) {
      const int p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
      if (s <= z[k]) {
        --k;  // z[0] is -inf, so this stops at k == 0
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill_n(d, n, kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double diff = q - v[j];
    d[q] = diff * diff + f[v[j]];
  }
}

}  // namespace detail

/// Squared Euclidean distance from every pixel to the nearest pixel where
/// `feature` is set; +inf everywhere when no feature pixel exists.
inline std::vector<double> squared_distance_transform(const std::vector<char>& feature, int h, int w) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> grid(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = feature[i] ? 0.0 : kInf;
  std::vector<int> v;
  std::vector<double> z;
  std::vector<double> col(static_cast<std::size_t>(h)), out(static_cast<std::size_t>(std::max(h, w)));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col[y] = grid[static_cast<std::size_t>(y) * w + x];
    detail::edt_1d(col.data(), h, out.data(), v, z);
    for (int y = 0; y < h; ++y) grid[static_cast<std::size_t>(y) * w + x] = out[y];
  }
  std::vector<double> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    std::copy_n(grid.data() + static_cast<std::size_t>(y) * w, w, row.data());
    detail::edt_1d(row.data(), w, out.data(), v, z);
    std::copy_n(out.data(), w, grid.data() + static_cast<std::size_t>(y) * w);
  }
  return grid;
}

/// Unnormalised signed distance in pixels: inside pixels carry minus the
/// distance to the nearest background pixel, outside pixels plus the distance
/// to the nearest foreground pixel. Values are +/-inf when the opposite set is empty.
inline Grid signed_distance(const Grid& mask) {
  require_binary(mask, "signed_distance input");
  const std::size_t n = mask.size();
  std::vector<char> fg(n), bg(n);
  for (std::size_t i = 0; i < n; ++i) {
    fg[i] = mask.data[i] > 0.5;
    bg[i] = !fg[i];
  }
  const auto to_fg = squared_distance_transform(fg, mask.height, mask.width);
  const auto to_bg = squared_distance_transform(bg, mask.height, mask.width);
  Grid out(mask.height, mask.width);
  for (std::size_t i = 0; i < n; ++i) out.data[i] = fg[i] ? -std::sqrt(to_bg[i]) : std::sqrt(to_fg[i]);
  return out;
}

struct SdfOptions {
  /// Normalisation constant as a fraction of the image diagonal.
  double diagonal_fraction = 0.1;
};

inline double sdf_normalizer(int h, int w, const SdfOptions& opts = {}) {
  return opts.diagonal_fraction * std::hypot(static_cast<double>(h), static_cast<double>(w));
}

/// Shape target: signed distance divided by 0.1 x diagonal, clipped to [-1, 1].
inline Grid sdf_from_mask(const Grid& mask, const SdfOptions& opts = {}) {
  Grid sd = signed_distance(mask);
  const double d = sdf_normalizer(mask.height, mask.width, opts);
  for (double& v : sd.data) v = std::clamp(v / d, -1.0, 1.0);
  return sd;
}

}  // namespace mtg
