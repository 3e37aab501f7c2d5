#pragma once

#include <cstdint>
#include <string>

#include "mtgnet/core/error.hpp"
#include "mtgnet/data/grid.hpp"

namespace mtg {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct MetricsRecord {
  double dice = 0, iou = 0, precision = 0, recall = 0;
  std::int64_t lesion_area_px = 0;
  double vessel_density = 0;
  std::int64_t avascular_area_px = 0;
};

inline ConfusionCounts confusion_counts(const Grid& pred, const Grid& gt) {
  require_same_shape(pred, gt, "confusion_metrics");
  require_binary(pred, "confusion_metrics prediction");
  require_binary(gt, "confusion_metrics ground truth");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] > 0.5, g = gt.data[i] > 0.5;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Dice, IoU, precision and recall from confusion counts. A ratio whose
/// denominator is empty scores 1 when nothing was missed or invented, else 0;
/// in particular empty vs empty scores 1 everywhere.
inline MetricsRecord metrics_from_counts(const ConfusionCounts& c) {
  MetricsRecord m;
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  m.dice = (c.tp + c.fp + c.fn == 0) ? 1.0 : 2 * tp / (2 * tp + fp + fn);
  m.iou = (c.tp + c.fp + c.fn == 0) ? 1.0 : tp / (tp + fp + fn);
  m.precision = (c.tp + c.fp == 0) ? (c.fn == 0 ? 1.0 : 0.0) : tp / (tp + fp);
  m.recall = (c.tp + c.fn == 0) ? (c.fp == 0 ? 1.0 : 0.0) : tp / (tp + fn);
  return m;
}

inline MetricsRecord confusion_metrics(const Grid& pred, const Grid& gt) {
  return metrics_from_counts(confusion_counts(pred, gt));
}

struct ClinicalMetrics {
  std::int64_t lesion_area_px = 0;
  double vessel_density = 0;
  std::int64_t avascular_area_px = 0;
};

/// Lesion area, vessel density inside the lesion and avascular lesion area.
/// Vessels outside the region are ignored.
inline ClinicalMetrics clinical_metrics(const Grid& region, const Grid& vessel) {
  require_same_shape(region, vessel, "clinical_metrics");
  ClinicalMetrics m;
  std::int64_t inside = 0;
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (region.data[i] <= 0.5) continue;
    ++m.lesion_area_px;
    if (vessel.data[i] > 0.5) ++inside;
  }
  m.vessel_density = m.lesion_area_px ? static_cast<double>(inside) / static_cast<double>(m.lesion_area_px) : 0.0;
  m.avascular_area_px = m.lesion_area_px - inside;
  return m;
}

}  // namespace mtg
