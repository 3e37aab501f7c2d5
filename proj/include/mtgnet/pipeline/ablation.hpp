#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "mtgnet/pipeline/report.hpp"

namespace mtg {

struct AblationOptions {
  std::vector<std::string> variants = variant_names();
  /// Training seeds; the data split is shared so test images pair up.
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  /// Per-run artifacts go to <out_dir>/<variant>/seed<k>; empty writes nothing.
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;
};

/// Directory-safe variant name ("M*3" -> "Mstar3").
inline std::string variant_dir_name(const std::string& name) {
  std::string out;
  for (char c : name) out += c == '*' ? std::string("star") : std::string(1, c);
  return out;
}

struct SingleRun {
  RunRecord record;
  std::vector<SampleMetrics> test_metrics;
};

/// Trains one configuration and scores it on the test split.
template <typename T = float>
SingleRun train_and_test(const RunConfig& cfg, const DatasetSplit& data, const std::filesystem::path& out_dir,
                         std::ostream* log) {
  Trainer<T> trainer(cfg, data, out_dir, log);
  SingleRun r;
  r.record = trainer.run();
  r.test_metrics = evaluate_samples(trainer.model(), data.test, cfg.train.batch);
  if (!out_dir.empty()) emit_report(out_dir, r.record, r.test_metrics);
  return r;
}

/// Trains every variant for every seed on the same split and pools the
/// per-image test metrics per variant.
template <typename T = float>
std::vector<VariantResult> run_ablation(const RunConfig& base, const AblationOptions& opts) {
  const DatasetSplit data = prepare_dataset(base);
  std::vector<VariantResult> out;
  for (const auto& name : opts.variants) {
    VariantResult vr;
    vr.variant = variant_from_name(name);
    for (auto seed : opts.seeds) {
      RunConfig cfg = base;
      cfg.model.variant = vr.variant;
      cfg.train.seed = seed;
      if (opts.log) *opts.log << "== " << name << " seed " << seed << std::endl;
      const auto dir = opts.out_dir.empty() ? std::filesystem::path{}
                                            : opts.out_dir / variant_dir_name(name) / ("seed" + std::to_string(seed));
      const SingleRun run = train_and_test<T>(cfg, data, dir, opts.log);
      const auto [r, v] = mean_dice(run.test_metrics);
      vr.seed_region_dice.push_back(r);
      vr.seed_vessel_dice.push_back(v);
      vr.metrics.insert(vr.metrics.end(), run.test_metrics.begin(), run.test_metrics.end());
    }
    out.push_back(std::move(vr));
  }
  if (!opts.out_dir.empty()) {
    write_ablation_table(opts.out_dir, out);
    write_variant_summary_csv(opts.out_dir / "summary.csv", out);
  }
  return out;
}

enum class SweepParam { kNodes, kMcSamples };

inline SweepParam sweep_param_from_string(const std::string& s) {
  if (s == "k" || s == "K") return SweepParam::kNodes;
  if (s == "z" || s == "Z") return SweepParam::kMcSamples;
  throw ValidationError("unknown sweep parameter '" + s + "' (expected k or z)");
}

/// Sensitivity sweep over graph nodes K or MC passes Z with the base variant.
template <typename T = float>
std::vector<SweepRow> run_sweep(const RunConfig& base, SweepParam param, const std::vector<int>& values,
                                const AblationOptions& opts) {
  const DatasetSplit data = prepare_dataset(base);
  std::vector<SweepRow> rows;
  for (int value : values) {
    SweepRow row;
    row.value = value;
    double seconds = 0;
    int epochs = 0;
    for (auto seed : opts.seeds) {
      RunConfig cfg = base;
      cfg.train.seed = seed;
      if (param == SweepParam::kNodes) cfg.model.graph.nodes = value;
      else cfg.train.mc_samples = value;
      cfg.validate();
      const std::string tag = (param == SweepParam::kNodes ? "K" : "Z") + std::to_string(value);
      if (opts.log) *opts.log << "== " << tag << " seed " << seed << std::endl;
      const auto dir = opts.out_dir.empty() ? std::filesystem::path{} : opts.out_dir / tag / ("seed" + std::to_string(seed));
      const SingleRun run = train_and_test<T>(cfg, data, dir, opts.log);
      for (const auto& m : run.test_metrics) {
        row.region_dice.push_back(m.region.dice);
        row.region_iou.push_back(m.region.iou);
      }
      for (const auto& e : run.record.epochs) seconds += e.seconds;
      epochs += static_cast<int>(run.record.epochs.size());
    }
    row.seconds_per_epoch = epochs ? seconds / epochs : 0.0;
    if (param == SweepParam::kNodes)
      row.dimension = std::to_string(value) + "x" + std::to_string(base.model.backbone.routed_channels);
    rows.push_back(std::move(row));
  }
  if (!opts.out_dir.empty())
    write_sweep_table(opts.out_dir / (param == SweepParam::kNodes ? "sweep_k.csv" : "sweep_z.csv"),
                      param == SweepParam::kNodes ? "K" : "Z", rows);
  return rows;
}

}  // namespace mtg
