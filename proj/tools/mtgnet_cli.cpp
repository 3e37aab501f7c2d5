// mtgnet command-line front end.

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtgnet/mtgnet.hpp"

namespace fs = std::filesystem;
using namespace mtg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "JSON config file");
    app->add_option("-s,--set", overrides, "Override a config key, e.g. --set train.epochs=20")->take_all();
  }
  RunConfig resolve() const { return resolve_config(file, overrides); }
};

template <typename V>
std::vector<V> parse_list(const std::string& s) {
  std::vector<V> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::stringstream is(item);
    V v;
    if (!(is >> v) || !is.eof()) throw ValidationError("cannot parse list item '" + item + "'");
    out.push_back(v);
  }
  return out;
}

template <>
std::vector<std::string> parse_list<std::string>(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_synth(const ConfigArgs& ca, const std::string& out) {
  RunConfig cfg = ca.resolve();
  const auto records = synthesize_records(cfg.data);
  write_dataset(out, records);
  write_json_file(fs::path(out) / "config.resolved.json", to_json(cfg));
  std::cout << "wrote " << records.size() << " samples to " << out << "\n";
  return kExitOk;
}

int cmd_train(const ConfigArgs& ca, const std::string& out, const std::string& resume, int stop_after) {
  RunConfig cfg = ca.resolve();
  const DatasetSplit data = prepare_dataset(cfg);
  std::cout << "train " << cfg.model.variant.name << ": " << data.train.size() << " train / " << data.val.size()
            << " val / " << data.test.size() << " test samples, config " << config_hash(cfg) << "\n";
  Trainer<float> trainer(cfg, data, out, &std::cout);
  if (!resume.empty()) {
    trainer.resume(resume);
    std::cout << "resumed at epoch " << trainer.state().epoch << "\n";
  }
  const RunRecord& r = trainer.run(stop_after);
  emit_report(fs::path(out) / "report", r, evaluate_samples(trainer.model(), data.val, cfg.train.batch));
  std::cout << "done in " << r.wall_clock_seconds << " s; val dice region " << r.val_region_dice << " vessel "
            << r.val_vessel_dice << "\n";
  return kExitOk;
}

std::vector<fs::path> list_inputs(const fs::path& input) {
  if (fs::is_regular_file(input)) return {input};
  fs::path dir = input;
  if (fs::is_directory(input / "images")) dir = input / "images";
  if (!fs::is_directory(dir)) throw IoError("input " + input.string() + " is neither a PNG file nor a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no PNG images under " + dir.string());
  return out;
}

int cmd_infer(const std::string& checkpoint, const std::string& input, const std::string& out, int mc, std::uint64_t seed) {
  LoadedModel<float> lm = load_model<float>(checkpoint);
  const int size = lm.config.train.input_size;
  std::vector<Grid> images;
  std::vector<std::string> ids;
  for (const auto& p : list_inputs(input)) {
    Grid g = read_png_gray(p.string());
    if (g.height != size || g.width != size) {
      std::cout << p.filename().string() << ": resampled " << g.height << "x" << g.width << " to " << size << "x" << size
                << "\n";
      g = resize_bilinear(g, size, size);
    }
    images.push_back(std::move(g));
    ids.push_back(p.stem().string());
  }
  std::vector<const Grid*> ptrs;
  for (const auto& g : images) ptrs.push_back(&g);
  const auto preds = predict(*lm.model, ptrs, {.batch = lm.config.train.batch, .mc_samples = mc, .seed = seed});
  for (std::size_t i = 0; i < preds.size(); ++i) write_prediction(out, ids[i], preds[i]);
  std::cout << "wrote predictions for " << preds.size() << " images to " << out << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data_root, const std::string& split,
                 const std::string& out, int panels, int mc) {
  LoadedModel<float> lm = load_model<float>(checkpoint);
  RunConfig cfg = lm.config;
  if (!data_root.empty()) cfg.data.root = data_root;
  DatasetSplit data = prepare_dataset(cfg);
  std::vector<SampleRecord> samples;
  if (split == "test") samples = data.test;
  else if (split == "val") samples = data.val;
  else if (split == "train") samples = data.train;
  else if (split == "all") {
    for (auto* s : {&data.train, &data.val, &data.test}) samples.insert(samples.end(), s->begin(), s->end());
  } else {
    throw ValidationError("unknown split '" + split + "' (expected train, val, test or all)");
  }
  if (samples.empty()) throw ValidationError("the " + split + " split is empty");
  const auto metrics = evaluate_samples(*lm.model, samples, cfg.train.batch);
  write_metric_csv(fs::path(out) / "metrics.csv", metrics);
  write_variant_summary_csv(fs::path(out) / "summary.csv", {VariantResult{cfg.model.variant, metrics, {}, {}}});
  const int n_panels = std::min<int>(panels, static_cast<int>(samples.size()));
  if (n_panels > 0) {
    std::vector<const Grid*> imgs;
    for (int i = 0; i < n_panels; ++i) imgs.push_back(&samples[static_cast<std::size_t>(i)].image);
    const auto preds = predict(*lm.model, imgs, {.batch = cfg.train.batch, .mc_samples = mc, .seed = cfg.train.seed});
    fs::create_directories(fs::path(out) / "panels");
    for (int i = 0; i < n_panels; ++i) {
      const auto& s = samples[static_cast<std::size_t>(i)];
      write_prediction_panel((fs::path(out) / "panels" / (s.id + ".png")).string(), s, preds[static_cast<std::size_t>(i)]);
      if (mc > 0)
        write_heatmap((fs::path(out) / "panels" / (s.id + "_region_variance.png")).string(),
                      preds[static_cast<std::size_t>(i)].region_variance, 0.0, 0.25);
    }
  }
  const auto [r, v] = mean_dice(metrics);
  std::cout << split << " (" << samples.size() << " samples): region dice " << r << ", vessel dice " << v << "\n";
  return kExitOk;
}

int cmd_ablate(const ConfigArgs& ca, const std::string& out, const std::string& grid, const std::string& variants,
               const std::string& seeds, const std::string& values) {
  RunConfig cfg = ca.resolve();
  AblationOptions opts;
  opts.out_dir = out;
  opts.log = &std::cout;
  if (!seeds.empty()) opts.seeds = parse_list<std::uint64_t>(seeds);
  if (opts.seeds.empty()) throw ValidationError("--seeds must list at least one seed");
  write_json_file(fs::path(out) / "config.resolved.json", to_json(cfg));
  if (grid == "variants") {
    if (!variants.empty()) opts.variants = parse_list<std::string>(variants);
    for (const auto& v : opts.variants) variant_from_name(v);
    const auto results = run_ablation(cfg, opts);
    for (const auto& r : results) {
      const MeanStd m = mean_std(r.seed_region_dice);
      std::cout << r.variant.name << ": region dice over seeds " << format_mean_std(m) << "\n";
    }
    std::cout << "ablation table: " << (fs::path(out) / "ablation.csv").string() << "\n";
    return kExitOk;
  }
  const SweepParam param = sweep_param_from_string(grid);
  std::vector<int> vals = parse_list<int>(values);
  if (vals.empty()) vals = param == SweepParam::kNodes ? std::vector<int>{6, 12, 18, 24} : std::vector<int>{5, 10, 20};
  const auto rows = run_sweep(cfg, param, vals, opts);
  for (const auto& r : rows)
    std::cout << grid << "=" << r.value << ": region dice " << format_mean_std(mean_std(r.region_dice)) << ", "
              << r.seconds_per_epoch << " s/epoch\n";
  return kExitOk;
}

int cmd_report(const std::string& run_dir, const std::string& metrics_csv, const std::string& out) {
  const fs::path run = run_dir;
  const RunRecord record = run_record_from_json(read_json_file(run / "run_record.json"));
  fs::path metrics = metrics_csv;
  if (metrics.empty()) {
    for (const auto& candidate : {run / "eval" / "metrics.csv", run / "report" / "metrics.csv"})
      if (fs::exists(candidate)) {
        metrics = candidate;
        break;
      }
  }
  const fs::path dest = out.empty() ? run / "report" : fs::path(out);
  fs::create_directories(dest);
  if (!metrics.empty()) {
    const auto m = read_metric_csv(metrics);
    emit_report(dest, record, m);
  } else {
    write_loss_svg(dest / "loss.svg", record);
    write_lambda_svg(dest / "lambda.svg", record);
  }
  std::cout << "report written to " << dest.string() << " (" << record.epochs.size() << " epochs, "
            << record.lambda_history.size() << " loss-weight updates)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtgnet: multi-task graph-reasoning segmentation of lesion regions and vessels"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  ConfigArgs synth_cfg, train_cfg, ablate_cfg;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic dataset (images/, region/, vessel/)");
  synth_cfg.attach(synth);
  synth->add_option("-o,--out", synth_out, "Dataset root")->required();

  std::string train_out, resume;
  int stop_after = 0;
  auto* train = app.add_subcommand("train", "Train a model");
  train_cfg.attach(train);
  train->add_option("-o,--out", train_out, "Run directory")->required();
  train->add_option("--resume", resume, "Continue from a checkpoint");
  train->add_option("--stop-after", stop_after, "Stop after this epoch (0 = run to the end)")->check(CLI::NonNegativeNumber);

  std::string ckpt, input, infer_out;
  int infer_mc = 0;
  std::uint64_t infer_seed = 0;
  auto* infer = app.add_subcommand("infer", "Predict masks (and MC uncertainty) for images");
  infer->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  infer->add_option("-i,--input", input, "PNG image, image directory or dataset root")->required();
  infer->add_option("-o,--out", infer_out, "Output directory")->required();
  infer->add_option("--mc", infer_mc, "MC-Dropout passes for uncertainty maps (0 = none)")->check(CLI::NonNegativeNumber);
  infer->add_option("--seed", infer_seed, "Seed of the MC-Dropout streams");

  std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
  int panels = 4, eval_mc = 10;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset split");
  evaluate->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  evaluate->add_option("--data", eval_data, "Dataset root (default: the checkpoint's data source)");
  evaluate->add_option("--split", eval_split, "train, val, test or all");
  evaluate->add_option("-o,--out", eval_out, "Output directory")->required();
  evaluate->add_option("--panels", panels, "Prediction panels to write")->check(CLI::NonNegativeNumber);
  evaluate->add_option("--mc", eval_mc, "MC-Dropout passes for the panel heatmaps")->check(CLI::NonNegativeNumber);

  std::string ablate_out, grid = "variants", variants, seeds, values;
  auto* ablate = app.add_subcommand("ablate", "Train and compare variants, or sweep K or Z");
  ablate_cfg.attach(ablate);
  ablate->add_option("-o,--out", ablate_out, "Output directory")->required();
  ablate->add_option("--grid", grid, "variants, k or z");
  ablate->add_option("--variants", variants, "Comma-separated variants (default: all seven)");
  ablate->add_option("--seeds", seeds, "Comma-separated training seeds (default 0,1,2)");
  ablate->add_option("--values", values, "Comma-separated sweep values");

  std::string report_run, report_metrics, report_out;
  auto* report = app.add_subcommand("report", "Render curves and metric tables of a finished run");
  report->add_option("--run", report_run, "Run directory with run_record.json")->required();
  report->add_option("--metrics", report_metrics, "Metric CSV from evaluate");
  report->add_option("-o,--out", report_out, "Output directory (default <run>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*synth) return cmd_synth(synth_cfg, synth_out);
    if (*train) return cmd_train(train_cfg, train_out, resume, stop_after);
    if (*infer) return cmd_infer(ckpt, input, infer_out, infer_mc, infer_seed);
    if (*evaluate) return cmd_evaluate(eval_ckpt, eval_data, eval_split, eval_out, panels, eval_mc);
    if (*ablate) return cmd_ablate(ablate_cfg, ablate_out, grid, variants, seeds, values);
    if (*report) return cmd_report(report_run, report_metrics, report_out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
