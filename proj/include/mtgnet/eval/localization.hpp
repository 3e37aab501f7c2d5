#pragma once

#include <vector>

#include "mtgnet/data/boundary.hpp"
#include "mtgnet/data/sdf.hpp"

namespace mtg {

/// Pixels within `radius` (Euclidean) of the mask's inner contour.
inline Grid contour_band(const Grid& mask, double radius) {
  require_binary(mask, "contour_band mask");
  const Grid contour = boundary_from_mask(mask);
  std::vector<char> feature(contour.size());
  for (std::size_t i = 0; i < contour.size(); ++i) feature[i] = contour.data[i] > 0.5;
  const auto d2 = squared_distance_transform(feature, mask.height, mask.width);
  Grid band(mask.height, mask.width);
  for (std::size_t i = 0; i < band.size(); ++i) band.data[i] = d2[i] <= radius * radius ? 1.0 : 0.0;
  return band;
}

struct BandContrast {
  double band_mean = 0, elsewhere_mean = 0;
  std::size_t band_pixels = 0, elsewhere_pixels = 0;
};

/// Mean of `values` inside and outside a band mask.
inline BandContrast band_contrast(const Grid& values, const Grid& band) {
  require_same_shape(values, band, "band_contrast");
  BandContrast c;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (band.data[i] > 0.5) {
      c.band_mean += values.data[i];
      ++c.band_pixels;
    } else {
      c.elsewhere_mean += values.data[i];
      ++c.elsewhere_pixels;
    }
  }
  if (c.band_pixels) c.band_mean /= static_cast<double>(c.band_pixels);
  if (c.elsewhere_pixels) c.elsewhere_mean /= static_cast<double>(c.elsewhere_pixels);
  return c;
}

}  // namespace mtg
