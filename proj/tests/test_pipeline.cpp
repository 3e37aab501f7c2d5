#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "mtgnet/mtgnet.hpp"

using namespace mtg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mtgnet_test_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiny_run(int epochs = 1, int count = 8) {
  RunConfig c;
  c.model.backbone.base_channels = 2;
  c.model.backbone.routed_channels = 4;
  c.model.backbone.aux_decoder_width = 2;
  c.model.graph.nodes = 2;
  c.train.epochs = epochs;
  c.train.input_size = 32;
  c.train.mc_samples = 2;
  c.train.uce_refresh_samples = 2;
  c.train.lambda_batch = 2;
  c.data.synth.image_size = 32;
  c.data.synthetic_count = count;
  c.validate();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

}  // namespace

TEST(Config, DefaultsRoundTripThroughJson) {
  const RunConfig c;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
  EXPECT_EQ(c.train.batch, 4);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-4);
  EXPECT_DOUBLE_EQ(c.train.weight_decay, 1e-4);
  EXPECT_EQ(c.model.graph.nodes, 12);
  EXPECT_EQ(c.train.mc_samples, 10);
}

TEST(Config, RejectsUnknownKeysBadTypesAndBadValues) {
  EXPECT_THROW(run_config_from_json(Json{{"train", {{"epochz", 3}}}}), ValidationError);
  EXPECT_THROW(run_config_from_json(Json{{"trainer", {}}}), ValidationError);
  EXPECT_THROW(run_config_from_json(Json{{"train", {{"epochs", "many"}}}}), ValidationError);
  EXPECT_THROW(run_config_from_json(Json{{"train", {{"input_size", 40}}}}), ValidationError);
  EXPECT_THROW(run_config_from_json(Json{{"train", {{"lr", 0.0}}}}), ValidationError);
  EXPECT_THROW(run_config_from_json(Json{{"model", {{"variant", "M9"}}}}), ValidationError);
  EXPECT_THROW(run_config_from_json(Json{{"data", {{"edge_method", "sobel"}}}}), ValidationError);
}

TEST(Config, FileThenOverridesInOrder) {
  const fs::path dir = temp_dir("config");
  write_json_file(dir / "cfg.json", Json{{"train", {{"epochs", 7}, {"lr", 0.002}}}, {"model", {{"variant", "M1"}}}});
  const RunConfig c = resolve_config((dir / "cfg.json").string(),
                                     {"train.epochs=9", "data.edge_method=canny", "train.augment=false", "train.epochs=11"});
  EXPECT_EQ(c.train.epochs, 11);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.002);
  EXPECT_EQ(c.model.variant.name, "M1");
  EXPECT_FALSE(c.model.variant.graph);
  EXPECT_EQ(c.data.edge_method, "canny");
  EXPECT_FALSE(c.train.augment);
  EXPECT_THROW(resolve_config("", {"train.epochs"}), ValidationError);
  EXPECT_THROW(resolve_config((dir / "missing.json").string(), {}), IoError);
  spit(dir / "broken.json", "{ not json");
  EXPECT_THROW(resolve_config((dir / "broken.json").string(), {}), ValidationError);
}

TEST(Config, InputSizeDrivesSyntheticSize) {
  const RunConfig c = resolve_config("", {"train.input_size=32"});
  EXPECT_EQ(c.data.synth.image_size, 32);
}

TEST(Variants, SevenAblationSwitchSettings) {
  const auto names = variant_names();
  ASSERT_EQ(names.size(), 7u);
  // boundary, shape, uce, graph
  const bool expected[7][4] = {{false, false, false, false}, {true, false, false, false}, {true, true, false, false},
                               {true, true, true, false},    {true, false, false, true},  {true, true, false, true},
                               {true, true, true, true}};
  for (int i = 0; i < 7; ++i) {
    const Variant v = variant_from_name(names[static_cast<std::size_t>(i)]);
    EXPECT_EQ(v.boundary_task, expected[i][0]) << v.name;
    EXPECT_EQ(v.shape_task, expected[i][1]) << v.name;
    EXPECT_EQ(v.uce, expected[i][2]) << v.name;
    EXPECT_EQ(v.graph, expected[i][3]) << v.name;
  }
}

TEST(Checkpoint, RoundTripRestoresEverythingExactly) {
  const fs::path dir = temp_dir("ckpt");
  RunConfig cfg = tiny_run(2);
  cfg.train.weight_update_period = 1;
  const DatasetSplit data = prepare_dataset(cfg);
  Trainer<float> trainer(cfg, data, dir);
  trainer.run();
  const LoadedModel<float> lm = load_model<float>(dir / "checkpoint.mtgck");
  EXPECT_EQ(to_json(lm.config), to_json(cfg));
  EXPECT_EQ(lm.state.epoch, 2);
  auto& a = trainer.model().parameters();
  auto& b = lm.model->parameters();
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t k = 0; k < a.params.size(); ++k) {
    EXPECT_EQ(a.params[k].name, b.params[k].name);
    EXPECT_EQ(a.params[k].tensor.values(), b.params[k].tensor.values()) << a.params[k].name;
  }
  ASSERT_EQ(a.buffers.size(), b.buffers.size());
  for (std::size_t k = 0; k < a.buffers.size(); ++k) EXPECT_EQ(*a.buffers[k].data, *b.buffers[k].data);

  const CheckpointFile f = read_checkpoint_file(dir / "checkpoint.mtgck");
  EXPECT_EQ(f.header.at("code_version"), kVersion);
  EXPECT_EQ(f.header.at("config_hash"), config_hash(cfg));
  EXPECT_GT(f.header.at("optimizer").at("steps").get<int>(), 0);
  EXPECT_TRUE(f.blobs.count("array/v_region"));
}

TEST(Checkpoint, MismatchesAreExplicitErrors) {
  const fs::path dir = temp_dir("ckpt_bad");
  RunConfig cfg = tiny_run(1);
  MtgNet<float> model(cfg.model, 0);
  save_checkpoint<float>(dir / "a.mtgck", cfg, model, nullptr, TrainingState{});
  const std::string bytes = slurp(dir / "a.mtgck");

  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  spit(dir / "magic.mtgck", wrong_magic);
  EXPECT_THROW(read_checkpoint_file(dir / "magic.mtgck"), LoadError);

  std::string future = bytes;
  const std::string tag = std::string("\"code_version\":\"") + kVersion + "\"";
  const auto at = future.find(tag);
  ASSERT_NE(at, std::string::npos);
  future[at + tag.size() - 6] = '9';  // major version digit
  spit(dir / "future.mtgck", future);
  try {
    read_checkpoint_file(dir / "future.mtgck");
    ADD_FAILURE() << "expected a version error";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("incompatible"), std::string::npos);
  }

  spit(dir / "short.mtgck", bytes.substr(0, bytes.size() - 100));
  EXPECT_THROW(read_checkpoint_file(dir / "short.mtgck"), LoadError);
  EXPECT_THROW(read_checkpoint_file(dir / "absent.mtgck"), IoError);

  ModelConfig bigger = cfg.model;
  bigger.graph.nodes = 3;
  MtgNet<float> other(bigger, 0);
  EXPECT_THROW(restore_checkpoint(read_checkpoint_file(dir / "a.mtgck"), other), LoadError);
  ModelConfig fewer = cfg.model;
  fewer.variant = variant_from_name("M0");
  MtgNet<float> bare(fewer, 0);
  EXPECT_THROW(restore_checkpoint(read_checkpoint_file(dir / "a.mtgck"), bare), LoadError);
}

TEST(Train, OneEpochSmokeRunWritesAllArtifacts) {
  const fs::path dir = temp_dir("smoke");
  const RunConfig cfg = tiny_run(1, 8);
  Trainer<float> trainer(cfg, prepare_dataset(cfg), dir);
  const RunRecord& r = trainer.run();
  EXPECT_EQ(r.epochs.size(), 1u);
  EXPECT_EQ(r.epochs_configured, 1);
  EXPECT_EQ(r.config_hash, config_hash(cfg));
  for (const char* f : {"checkpoint.mtgck", "config.resolved.json", "run_record.json", "epochs.csv", "steps.csv", "lambda.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(run_config_from_json(read_json_file(dir / "config.resolved.json")).train.epochs, 1);
  const RunRecord back = run_record_from_json(read_json_file(dir / "run_record.json"));
  EXPECT_EQ(back.epochs.size(), 1u);
  EXPECT_EQ(back.steps.size(), r.steps.size());
  EXPECT_TRUE(std::isfinite(back.epochs[0].total));
}

TEST(Train, RejectsSamplesOfTheWrongSize) {
  RunConfig cfg = tiny_run(1);
  DatasetSplit data = prepare_dataset(cfg);
  data.train[0].image = Grid(48, 48);
  EXPECT_THROW(Trainer<float>(cfg, data), ShapeError);
}

TEST(Schedule, UpdateEpochsForTheFullProtocol) {
  EXPECT_EQ(lambda_update_epochs(300, 50), (std::vector<int>{50, 100, 150, 200, 250, 300}));
  EXPECT_EQ(lambda_update_epochs(30, 5), (std::vector<int>{5, 10, 15, 20, 25, 30}));
  EXPECT_TRUE(lambda_update_epochs(4, 5).empty());
}

TEST(Schedule, ShortSurrogateLogsSixUpdatesSummingToOne) {
  RunConfig cfg = tiny_run(30, 8);
  cfg.train.weight_update_period = 5;
  cfg.train.eval_every = 10;
  Trainer<float> trainer(cfg, prepare_dataset(cfg));
  const RunRecord& r = trainer.run();
  ASSERT_EQ(r.lambda_history.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(r.lambda_history[i].epoch, 5 * static_cast<int>(i + 1));
    EXPECT_NEAR(r.lambda_history[i].weights.sum(), 1.0, 1e-9);
  }
  EXPECT_EQ(r.epochs.size(), 30u);
  EXPECT_EQ(lambda_steps(r).size(), 7u);

  // Every logged total is the weighted combination of the logged task losses.
  ASSERT_FALSE(r.steps.empty());
  for (const auto& s : r.steps) {
    const double recomputed = s.lambda.region * s.region + s.lambda.boundary * s.boundary + s.lambda.shape * s.shape + s.vessel;
    EXPECT_NEAR(s.total, recomputed, 1e-6) << "epoch " << s.epoch << " step " << s.step;
  }
  // Weights change only at update epochs.
  for (const auto& e : r.epochs) {
    const int updates_before = (e.epoch - 1) / 5;
    const LossWeights expected = updates_before == 0 ? uniform_weights(true, true) : r.lambda_history[updates_before - 1].weights;
    EXPECT_DOUBLE_EQ(e.lambda.region, expected.region) << e.epoch;
  }
}

TEST(Schedule, UncertaintyOffKeepsUniformWeights) {
  RunConfig cfg = tiny_run(6, 8);
  cfg.model.variant = variant_from_name("M2");
  cfg.train.weight_update_period = 2;
  Trainer<float> trainer(cfg, prepare_dataset(cfg));
  const RunRecord& r = trainer.run();
  EXPECT_TRUE(r.lambda_history.empty());
  for (const auto& s : r.steps) {
    EXPECT_DOUBLE_EQ(s.lambda.region, 1.0 / 3.0);
    EXPECT_NEAR(s.total, (s.region + s.boundary + s.shape) / 3.0 + s.vessel, 1e-6);
  }
}

TEST(Resume, ContinuesOnTheSameScheduleAndWeights) {
  RunConfig cfg = tiny_run(12, 8);
  cfg.train.weight_update_period = 4;
  const DatasetSplit data = prepare_dataset(cfg);
  Trainer<float> full(cfg, data);
  const RunRecord a = full.run();

  const fs::path dir = temp_dir("resume");
  {
    Trainer<float> first(cfg, data, dir);
    first.run(6);
    EXPECT_EQ(first.state().epoch, 6);
    EXPECT_EQ(first.state().lambda_history.size(), 1u);
  }
  Trainer<float> second(cfg, data, dir);
  second.resume(dir / "checkpoint.mtgck");
  const RunRecord b = second.run();

  ASSERT_EQ(a.lambda_history.size(), 3u);
  ASSERT_EQ(b.lambda_history.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.lambda_history[i].epoch, b.lambda_history[i].epoch);
    EXPECT_NEAR(a.lambda_history[i].weights.region, b.lambda_history[i].weights.region, 1e-12);
    EXPECT_NEAR(a.lambda_history[i].weights.shape, b.lambda_history[i].weights.shape, 1e-12);
  }
  EXPECT_EQ(b.epochs.size(), 12u);
  auto& pa = full.model().parameters().params;
  auto& pb = second.model().parameters().params;
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k].tensor.values(), pb[k].tensor.values()) << pa[k].name;

  RunConfig other = cfg;
  other.model.graph.nodes = 3;
  Trainer<float> wrong(other, data);
  EXPECT_THROW(wrong.resume(dir / "checkpoint.mtgck"), LoadError);
}

TEST(Train, DivergenceNamesTheFirstNonFiniteTensor) {
  const RunConfig cfg = tiny_run(1, 8);
  Trainer<float> trainer(cfg, prepare_dataset(cfg));
  auto& p = trainer.model().parameters().params.front();
  p.tensor.values()[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    trainer.run();
    ADD_FAILURE() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find(p.name), std::string::npos) << e.what();
  }
}

TEST(Train, TwoStageFreezesTheRegionBranchInTheSecondHalf) {
  RunConfig cfg = tiny_run(2, 8);
  cfg.train.two_stage = true;
  const DatasetSplit data = prepare_dataset(cfg);
  Trainer<float> trainer(cfg, data);
  trainer.run(1);
  std::vector<std::vector<float>> before;
  for (const auto& p : trainer.model().parameters().params) before.push_back(p.tensor.values());
  trainer.run();
  const auto& params = trainer.model().parameters().params;
  bool vessel_moved = false;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const bool vessel = params[k].name.rfind("vessel.", 0) == 0;
    if (!vessel) EXPECT_EQ(params[k].tensor.values(), before[k]) << params[k].name;
    else vessel_moved = vessel_moved || params[k].tensor.values() != before[k];
  }
  EXPECT_TRUE(vessel_moved);
}

TEST(Cascade, ZeroRegionGivesZeroVesselInputAtInference) {
  const RunConfig cfg = tiny_run();
  MtgNet<float> model(cfg.model, 4);
  Rng rng(5);
  std::vector<float> img(2 * 32 * 32);
  for (auto& v : img) v = static_cast<float>(rng.uniform(0.1, 1.0));
  const auto x = Tensor<float>::from(Shape{2, 1, 32, 32}, img);
  NoGradGuard no_grad;
  Tensor<float> masked;
  model.forward_vessel(x, Tensor<float>::zeros(x.shape()), CascadeMode::kInfer, {}, &masked);
  for (float v : masked.values()) EXPECT_EQ(v, 0.0f);

  std::vector<float> hard(img.size());
  for (auto& v : hard) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
  model.forward_vessel(x, Tensor<float>::from(x.shape(), hard), CascadeMode::kInfer, {}, &masked);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(masked.values()[i], img[i] * hard[i]);

  const CascadeOutput<float> o = model.forward(x, CascadeMode::kInfer, {});
  for (const Tensor<float>* t : {&o.region_prob, &o.boundary_prob, &o.shape_map, &o.vessel_prob}) {
    EXPECT_EQ(t->dim(2), 32);
    EXPECT_EQ(t->dim(3), 32);
  }
}

TEST(Inference, DeterministicAndDropoutFreeUncertaintyIsZero) {
  RunConfig cfg = tiny_run();
  const auto sample = generate_synthetic_sample(3, cfg.data.synth);
  MtgNet<float> model(cfg.model, 1);
  const auto a = predict(model, {&sample.image, &sample.image}, {.mc_samples = 3, .seed = 8});
  const auto b = predict(model, {&sample.image}, {.mc_samples = 3, .seed = 8});
  const auto b2 = predict(model, {&sample.image}, {.mc_samples = 3, .seed = 8});
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].region_prob, a[1].region_prob);
  EXPECT_EQ(a[0].region_prob, b[0].region_prob);
  EXPECT_EQ(b[0].region_variance, b2[0].region_variance);
  EXPECT_EQ(b[0].vessel_variance, b2[0].vessel_variance);
  EXPECT_TRUE(is_binary(a[0].region_mask));
  for (std::size_t i = 0; i < a[0].vessel_mask.size(); ++i)
    if (a[0].vessel_mask.data[i] > 0) {
      EXPECT_EQ(a[0].region_mask.data[i], 1.0);
    }

  cfg.model.backbone.dropout_rate = 0.0;
  MtgNet<float> plain(cfg.model, 1);
  const auto c = predict(plain, {&sample.image}, {.mc_samples = 4});
  for (const Grid* g : {&c[0].region_variance, &c[0].vessel_variance, &c[0].boundary_variance, &c[0].shape_variance})
    for (double v : g->data) EXPECT_EQ(v, 0.0);
}

TEST(Inference, WritesMasksProbabilitiesAndHeatmaps) {
  const fs::path dir = temp_dir("infer");
  const RunConfig cfg = tiny_run();
  const auto sample = generate_synthetic_sample(4, cfg.data.synth);
  MtgNet<float> model(cfg.model, 1);
  const auto p = predict(model, {&sample.image}, {.mc_samples = 2});
  write_prediction(dir, "s", p[0]);
  for (const char* f : {"s_region_mask.png", "s_vessel_mask.png", "s_region_prob.f32", "s_region_prob.json",
                        "s_region_variance.png", "s_vessel_variance.f32"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(read_png_gray((dir / "s_region_mask.png").string()), p[0].region_mask);
  const Grid prob = load_grid(dir / "s_region_prob");
  for (std::size_t i = 0; i < prob.size(); ++i) EXPECT_NEAR(prob.data[i], p[0].region_prob.data[i], 1e-7);
}

TEST(McSampling, TwentyPassesCostAboutTwiceTen) {
  const RunConfig cfg = tiny_run();
  MtgNet<float> model(cfg.model, 2);
  Rng rng(3);
  std::vector<float> img(4 * 32 * 32);
  for (auto& v : img) v = static_cast<float>(rng.uniform());
  const auto x = Tensor<float>::from(Shape{4, 1, 32, 32}, img);
  const auto time_z = [&](int z) {
    double best = 1e9;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      summarize_samples(mc_sample(model, x, z, 1));
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  time_z(2);
  const double ratio = time_z(10) / time_z(20);
  EXPECT_GT(ratio, 0.35);
  EXPECT_LT(ratio, 0.7);
}

TEST(Report, MetricCsvLayoutAndRoundTrip) {
  const fs::path dir = temp_dir("report");
  std::vector<SampleMetrics> m(3);
  for (int i = 0; i < 3; ++i) {
    m[i].id = "s" + std::to_string(i);
    m[i].region = {0.5 + 0.1 * i, 0.4, 0.6, 0.7, 100 + i, 0.25, 75};
    m[i].vessel = {0.8, 0.7 - 0.1 * i, 0.9, 0.6, 100 + i, 0.25, 75};
  }
  write_metric_csv(dir / "metrics.csv", m);
  std::ifstream in(dir / "metrics.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 1u + 6u + 2u + 1u);
  EXPECT_EQ(lines[0], "id,task,dice,iou,precision,recall,lesion_area,vessel_density,avascular_area");
  EXPECT_EQ(lines[7].rfind("mean(std),region,0.6000(0.1000),", 0), 0u) << lines[7];
  EXPECT_EQ(lines[8].rfind("mean(std),vessel,0.8000(0.0000),0.6000(0.1000)", 0), 0u) << lines[8];
  EXPECT_EQ(lines[9][0], '#');
  const auto back = read_metric_csv(dir / "metrics.csv");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_DOUBLE_EQ(back[2].region.dice, 0.7);
  EXPECT_EQ(back[1].vessel.lesion_area_px, 101);
}

TEST(Report, MeanStdFormatting) {
  EXPECT_EQ(format_mean_std(mean_std({1.0, 2.0, 3.0})), "2.0000(1.0000)");
  EXPECT_EQ(format_mean_std(mean_std({0.5})), "0.5000(0.0000)");
}

TEST(Report, AblationTableHasOneRowPerVariantAndTask) {
  const fs::path dir = temp_dir("ablation_table");
  std::vector<VariantResult> results;
  for (const auto& name : variant_names()) {
    VariantResult r;
    r.variant = variant_from_name(name);
    for (int i = 0; i < 4; ++i) {
      SampleMetrics s;
      s.id = "x" + std::to_string(i);
      s.region.dice = 0.5 + 0.01 * i + 0.02 * static_cast<double>(results.size()) + (i % 2 ? 0.003 : 0.0);
      s.vessel.dice = 0.6;
      r.metrics.push_back(s);
    }
    results.push_back(r);
  }
  write_ablation_table(dir, results);
  write_variant_summary_csv(dir / "summary.csv", results);
  std::ifstream in(dir / "ablation.csv");
  std::vector<std::string> rows;
  for (std::string l; std::getline(in, l);)
    if (!l.empty() && l[0] != '#') rows.push_back(l);
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[1].rfind("M0,,,,,", 0), 0u);
  EXPECT_EQ(rows[4].rfind("M3,x,x,x,,", 0), 0u);
  EXPECT_EQ(rows[7].rfind("M*3,x,x,x,x,", 0), 0u);
  std::ifstream sin(dir / "summary.csv");
  int data_rows = 0;
  for (std::string l; std::getline(sin, l);)
    if (!l.empty() && l[0] != '#' && l.rfind("variant,", 0) != 0) ++data_rows;
  EXPECT_EQ(data_rows, 14);
}

TEST(Report, LambdaCurveHasOneStepPerUpdate) {
  const fs::path dir = temp_dir("lambda_svg");
  RunRecord r;
  r.variant = "M*3";
  r.epochs_configured = 300;
  for (int e = 1; e <= 300; ++e) r.epochs.push_back(EpochRecord{.epoch = e, .lambda = uniform_weights(true, true)});
  for (int k = 1; k <= 6; ++k) r.lambda_history.push_back({50 * k, 0, 0, 0, {0.2, 0.3, 0.5}});
  const auto steps = lambda_steps(r);
  EXPECT_EQ(steps.size() - 1, 6u);
  write_lambda_svg(dir / "lambda.svg", r);
  write_loss_svg(dir / "loss.svg", r);
  const std::string svg = slurp(dir / "lambda.svg");
  const auto first = svg.find("class=\"lambda_region\"");
  ASSERT_NE(first, std::string::npos);
  const std::string path = svg.substr(first, svg.find("/>", first) - first);
  int vertical = 0;
  for (char c : path) vertical += c == 'V';
  EXPECT_EQ(vertical, 6);
  EXPECT_NE(slurp(dir / "loss.svg").find("<svg"), std::string::npos);
}

TEST(Report, PredictionPanelIsWrittenSideBySide) {
  const fs::path dir = temp_dir("panel");
  const RunConfig cfg = tiny_run();
  const auto sample = generate_synthetic_sample(2, cfg.data.synth);
  MtgNet<float> model(cfg.model, 1);
  const auto p = predict(model, {&sample.image}, {.mc_samples = 2});
  write_prediction_panel((dir / "panel.png").string(), sample, p[0]);
  const Grid g = read_png_gray((dir / "panel.png").string());
  EXPECT_EQ(g.height, 32);
  EXPECT_EQ(g.width, 6 * 34 - 2);
}

TEST(Data, SyntheticDatasetSplitsSixtyTenThirty) {
  RunConfig cfg = tiny_run(1, 200);
  cfg.data.synth.image_size = 32;
  const DatasetSplit d = prepare_dataset(cfg);
  EXPECT_EQ(d.train.size(), 120u);
  EXPECT_EQ(d.val.size(), 20u);
  EXPECT_EQ(d.test.size(), 60u);
  const DatasetSplit again = prepare_dataset(cfg);
  EXPECT_EQ(again.test.front().id, d.test.front().id);
  EXPECT_EQ(again.test.front().image, d.test.front().image);
}
