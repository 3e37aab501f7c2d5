#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtgnet/eval/stats.hpp"
#include "mtgnet/pipeline/inference.hpp"
#include "mtgnet/pipeline/trainer.hpp"

namespace mtg {

struct MeanStd {
  double mean = 0, std = 0;
};

/// Mean and sample standard deviation (0 for fewer than two values).
inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return r;
  double ss = 0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return r;
}

/// "0.8721(0.0880)"
inline std::string format_mean_std(const MeanStd& m, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f(%.*f)", digits, m.mean, digits, m.std);
  return buf;
}

inline constexpr const char* kEmptyMaskNote =
    "# empty prediction vs empty ground truth scores dice = iou = precision = recall = 1; "
    "an empty denominator with any miss or false positive scores 0";

enum class Task { kRegion, kVessel };

inline const char* to_string(Task t) { return t == Task::kRegion ? "region" : "vessel"; }

inline const MetricsRecord& task_record(const SampleMetrics& s, Task t) {
  return t == Task::kRegion ? s.region : s.vessel;
}

/// Column of one metric over samples.
inline std::vector<double> metric_column(const std::vector<SampleMetrics>& m, Task t, double MetricsRecord::*field) {
  std::vector<double> out;
  out.reserve(m.size());
  for (const auto& s : m) out.push_back(task_record(s, t).*field);
  return out;
}

inline std::vector<double> clinical_column(const std::vector<SampleMetrics>& m, int which) {
  std::vector<double> out;
  for (const auto& s : m) {
    const MetricsRecord& r = s.region;
    out.push_back(which == 0 ? static_cast<double>(r.lesion_area_px)
                  : which == 1 ? r.vessel_density
                               : static_cast<double>(r.avascular_area_px));
  }
  return out;
}

/// Per-image rows for both tasks, then one mean(std) row per task.
inline void write_metric_csv(const std::filesystem::path& path, const std::vector<SampleMetrics>& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(6);
  out << "id,task,dice,iou,precision,recall,lesion_area,vessel_density,avascular_area\n";
  for (const auto& s : m)
    for (Task t : {Task::kRegion, Task::kVessel}) {
      const MetricsRecord& r = task_record(s, t);
      out << s.id << ',' << to_string(t) << ',' << r.dice << ',' << r.iou << ',' << r.precision << ',' << r.recall
          << ',' << r.lesion_area_px << ',' << r.vessel_density << ',' << r.avascular_area_px << '\n';
    }
  for (Task t : {Task::kRegion, Task::kVessel}) {
    out << "mean(std)," << to_string(t);
    for (auto f : {&MetricsRecord::dice, &MetricsRecord::iou, &MetricsRecord::precision, &MetricsRecord::recall})
      out << ',' << format_mean_std(mean_std(metric_column(m, t, f)));
    for (int c = 0; c < 3; ++c) out << ',' << format_mean_std(mean_std(clinical_column(m, c)));
    out << '\n';
  }
  out << kEmptyMaskNote << '\n';
}

/// Parses the per-image rows of a metric CSV (summary and comment rows are skipped).
inline std::vector<SampleMetrics> read_metric_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::map<std::string, SampleMetrics> by_id;
  std::vector<std::string> order;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("mean(std)", 0) == 0) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw ValidationError("malformed metric row in " + path.string() + ": " + line);
    if (!by_id.count(f[0])) order.push_back(f[0]);
    SampleMetrics& s = by_id[f[0]];
    s.id = f[0];
    MetricsRecord& r = f[1] == "region" ? s.region : s.vessel;
    r.dice = std::stod(f[2]);
    r.iou = std::stod(f[3]);
    r.precision = std::stod(f[4]);
    r.recall = std::stod(f[5]);
    r.lesion_area_px = std::stoll(f[6]);
    r.vessel_density = std::stod(f[7]);
    r.avascular_area_px = std::stoll(f[8]);
  }
  std::vector<SampleMetrics> out;
  for (const auto& id : order) out.push_back(by_id[id]);
  return out;
}

/// Results of one model variant (possibly pooled over seeds).
struct VariantResult {
  Variant variant;
  std::vector<SampleMetrics> metrics;
  /// Mean region / vessel Dice of each seed.
  std::vector<double> seed_region_dice, seed_vessel_dice;
};

/// One row per variant per task: variant,task,dice,iou,recall,precision as mean(std).
inline void write_variant_summary_csv(const std::filesystem::path& path, const std::vector<VariantResult>& results) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "variant,task,dice,iou,recall,precision\n";
  for (const auto& r : results)
    for (Task t : {Task::kRegion, Task::kVessel}) {
      out << r.variant.name << ',' << to_string(t);
      for (auto f : {&MetricsRecord::dice, &MetricsRecord::iou, &MetricsRecord::recall, &MetricsRecord::precision})
        out << ',' << format_mean_std(mean_std(metric_column(r.metrics, t, f)));
      out << '\n';
    }
  out << kEmptyMaskNote << '\n';
}

/// Per-id mean region Dice, for pairing the same test images across variants.
inline std::map<std::string, double> region_dice_by_id(const std::vector<SampleMetrics>& m) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& s : m) {
    acc[s.id].first += s.region.dice;
    acc[s.id].second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [id, p] : acc) out[id] = p.first / p.second;
  return out;
}

/// Ablation grid in the layout of the usual ablation table: method, the four
/// switches, region DICE/IoU/Recall/Pre, vessel DICE/IoU/Recall/Pre, then a
/// paired t-test of per-image region Dice against the first row.
inline void write_ablation_table(const std::filesystem::path& dir, const std::vector<VariantResult>& results) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "ablation.csv"), md(dir / "ablation.md");
  if (!csv || !md) throw IoError("cannot write ablation tables under " + dir.string());
  csv << "method,boundary,shape,uce,graph,region_dice,region_iou,region_recall,region_pre,vessel_dice,vessel_iou,"
         "vessel_recall,vessel_pre,seeds,t_vs_baseline,p_vs_baseline\n";
  md << "| Method | B | S | U | G | Region DICE | IoU | Recall | Pre | Vessel DICE | IoU | Recall | Pre | t | p |\n";
  md << "|---|---|---|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  const auto base = results.empty() ? std::map<std::string, double>{} : region_dice_by_id(results.front().metrics);
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& r = results[k];
    const auto flag = [](bool b) { return b ? "x" : ""; };
    std::vector<std::string> cells;
    for (Task t : {Task::kRegion, Task::kVessel})
      for (auto f : {&MetricsRecord::dice, &MetricsRecord::iou, &MetricsRecord::recall, &MetricsRecord::precision})
        cells.push_back(format_mean_std(mean_std(metric_column(r.metrics, t, f))));
    std::string t_cell, p_cell;
    if (k > 0) {
      const auto mine = region_dice_by_id(r.metrics);
      std::vector<double> pre, post;
      for (const auto& [id, d] : base)
        if (mine.count(id)) {
          pre.push_back(d);
          post.push_back(mine.at(id));
        }
      try {
        const TTestResult tt = paired_t_test(pre, post);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.4f", tt.t_statistic);
        t_cell = buf;
        std::snprintf(buf, sizeof(buf), "%.4g", tt.p_value);
        p_cell = buf;
      } catch (const ValidationError&) {
        t_cell = p_cell = "n/a";
      }
    }
    csv << r.variant.name << ',' << flag(r.variant.boundary_task) << ',' << flag(r.variant.shape_task) << ','
        << flag(r.variant.uce) << ',' << flag(r.variant.graph);
    for (const auto& c : cells) csv << ',' << c;
    csv << ',' << std::max<std::size_t>(1, r.seed_region_dice.size()) << ',' << t_cell << ',' << p_cell << '\n';
    md << "| " << r.variant.name << " | " << flag(r.variant.boundary_task) << " | " << flag(r.variant.shape_task)
       << " | " << flag(r.variant.uce) << " | " << flag(r.variant.graph);
    for (const auto& c : cells) md << " | " << c;
    md << " | " << t_cell << " | " << p_cell << " |\n";
  }
  csv << kEmptyMaskNote << '\n';
  md << "\nB = boundary task, S = shape task, U = uncertainty-weighted loss, G = MIGR + MRGR. "
        "t and p: paired t-test of per-image region Dice against " +
            (results.empty() ? std::string("the first row") : results.front().variant.name) + ".\n";
}

/// One setting of a sensitivity sweep (graph nodes K or MC passes Z).
struct SweepRow {
  int value = 0;
  std::vector<double> region_dice, region_iou;
  double seconds_per_epoch = 0;
  /// Graph size as nodes x channels; empty for sweeps where it does not change.
  std::string dimension;
};

inline void write_sweep_table(const std::filesystem::path& path, const std::string& param,
                              const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const bool with_dim = !rows.empty() && !rows.front().dimension.empty();
  out << param << ",dice,iou" << (with_dim ? ",dimension" : "") << ",seconds_per_epoch\n";
  for (const auto& r : rows) {
    out << r.value << ',' << format_mean_std(mean_std(r.region_dice)) << ','
        << format_mean_std(mean_std(r.region_iou));
    if (with_dim) out << ',' << r.dimension;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", r.seconds_per_epoch);
    out << ',' << buf << '\n';
  }
}

/// Breakpoints of the piecewise-constant loss-weight schedule: the initial
/// weights at epoch 0, then one entry per update.
inline std::vector<std::pair<int, LossWeights>> lambda_steps(const RunRecord& r) {
  std::vector<std::pair<int, LossWeights>> out;
  out.emplace_back(0, r.epochs.empty() ? LossWeights{} : r.epochs.front().lambda);
  for (const auto& u : r.lambda_history) out.emplace_back(u.epoch, u.weights);
  return out;
}

namespace detail {

struct Series {
  std::string name, colour;
  std::vector<std::pair<double, double>> points;
  bool steps = false;
};

inline std::string svg_plot(const std::string& title, const std::string& x_label, const std::vector<Series>& series,
                            double x_max) {
  const double w = 640, h = 360, left = 60, right = 150, top = 30, bottom = 40;
  double y_min = 0, y_max = 0;
  bool first = true;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(y)) continue;
      y_min = first ? y : std::min(y_min, y);
      y_max = first ? y : std::max(y_max, y);
      first = false;
    }
  y_min = std::min(y_min, 0.0);
  if (y_max <= y_min) y_max = y_min + 1;
  if (x_max <= 0) x_max = 1;
  const auto px = [&](double x) { return left + (w - left - right) * x / x_max; };
  const auto py = [&](double y) { return top + (h - top - bottom) * (1 - (y - y_min) / (y_max - y_min)); };
  std::ostringstream o;
  o.precision(5);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << py(y_min) << "\" x2=\"" << px(x_max) << "\" y2=\"" << py(y_min)
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << py(y_min) << "\" x2=\"" << left << "\" y2=\"" << py(y_max)
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y_min + (y_max - y_min) * i / 4.0, xv = x_max * i / 4.0;
    o << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << yv
      << "</text>\n";
    o << "<text x=\"" << px(xv) << "\" y=\"" << py(y_min) + 14 << "\" text-anchor=\"middle\" font-size=\"10\">" << xv
      << "</text>\n";
  }
  o << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 6 << "\" text-anchor=\"middle\" font-size=\"11\">"
    << x_label << "</text>\n";
  int row = 0;
  for (const auto& s : series) {
    if (s.points.empty()) continue;
    o << "<path class=\"" << s.name << "\" fill=\"none\" stroke=\"" << s.colour << "\" stroke-width=\"1.5\" d=\"";
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const auto [x, y] = s.points[i];
      if (i == 0) o << "M" << px(x) << " " << py(y);
      else if (s.steps) o << " H" << px(x) << " V" << py(y);
      else o << " L" << px(x) << " " << py(y);
    }
    if (s.steps) o << " H" << px(x_max);
    o << "\"/>\n";
    const double ly = top + 14 + 16 * row++;
    o << "<line x1=\"" << w - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << w - right + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << s.colour << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << w - right + 36 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << s.name << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace detail

inline void write_loss_svg(const std::filesystem::path& path, const RunRecord& r) {
  std::vector<detail::Series> s{{"total", "#000000", {}},
                                {"region", "#d62728", {}},
                                {"boundary", "#2ca02c", {}},
                                {"shape", "#9467bd", {}},
                                {"vessel", "#1f77b4", {}}};
  for (const auto& e : r.epochs) {
    s[0].points.emplace_back(e.epoch, e.total);
    s[1].points.emplace_back(e.epoch, e.region);
    if (e.boundary != 0) s[2].points.emplace_back(e.epoch, e.boundary);
    if (e.shape != 0) s[3].points.emplace_back(e.epoch, e.shape);
    s[4].points.emplace_back(e.epoch, e.vessel);
  }
  const double x_max = r.epochs.empty() ? 1 : r.epochs.back().epoch;
  detail::write_text(path, detail::svg_plot("Training losses (" + r.variant + ")", "epoch", s, x_max));
}

/// Step plot of the loss weights; one vertical step per update.
inline void write_lambda_svg(const std::filesystem::path& path, const RunRecord& r) {
  std::vector<detail::Series> s{{"lambda_region", "#d62728", {}, true},
                                {"lambda_boundary", "#2ca02c", {}, true},
                                {"lambda_shape", "#9467bd", {}, true}};
  for (const auto& [epoch, w] : lambda_steps(r)) {
    s[0].points.emplace_back(epoch, w.region);
    s[1].points.emplace_back(epoch, w.boundary);
    s[2].points.emplace_back(epoch, w.shape);
  }
  const double x_max = std::max<double>(r.epochs_configured, r.epochs.empty() ? 1 : r.epochs.back().epoch);
  detail::write_text(path, detail::svg_plot("Loss weights (" + r.variant + ")", "epoch", s, x_max));
}

/// Side-by-side RGB panel: image, true region, predicted region, true
/// vessels, predicted vessels and (when present) the region variance heatmap.
inline void write_prediction_panel(const std::string& path, const SampleRecord& truth, const Prediction& p) {
  std::vector<std::vector<std::uint8_t>> tiles;
  const auto gray = [](const Grid& g) {
    std::vector<std::uint8_t> px;
    for (double v : g.data) px.insert(px.end(), 3, to_byte(v));
    return px;
  };
  tiles.push_back(gray(truth.image));
  tiles.push_back(gray(truth.region_mask));
  tiles.push_back(gray(p.region_mask));
  tiles.push_back(gray(truth.vessel_mask));
  tiles.push_back(gray(p.vessel_mask));
  if (p.has_uncertainty) tiles.push_back(heatmap_rgb(p.region_variance, 0.0, 0.25));
  const int h = truth.image.height, w = truth.image.width, gap = 2;
  const int pw = static_cast<int>(tiles.size()) * (w + gap) - gap;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(pw) * h * 3, 255);
  for (std::size_t k = 0; k < tiles.size(); ++k)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          px[(static_cast<std::size_t>(y) * pw + static_cast<int>(k) * (w + gap) + x) * 3 + c] =
              tiles[k][(static_cast<std::size_t>(y) * w + x) * 3 + c];
  write_png(path, pw, h, 3, px);
}

/// Metric CSV, loss and loss-weight curves for one run.
inline void emit_report(const std::filesystem::path& dir, const RunRecord& record,
                        const std::vector<SampleMetrics>& metrics) {
  std::filesystem::create_directories(dir);
  write_metric_csv(dir / "metrics.csv", metrics);
  write_variant_summary_csv(dir / "summary.csv", {VariantResult{variant_from_name(record.variant), metrics, {}, {}}});
  write_loss_svg(dir / "loss.svg", record);
  write_lambda_svg(dir / "lambda.svg", record);
}

}  // namespace mtg
