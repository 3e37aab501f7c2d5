#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "mtgnet/data/augment.hpp"
#include "mtgnet/pipeline/checkpoint.hpp"
#include "mtgnet/pipeline/inference.hpp"
#include "mtgnet/pipeline/run_data.hpp"

namespace mtg {

struct StepRecord {
  int epoch = 0, step = 0;
  double total = 0, region = 0, boundary = 0, shape = 0, vessel = 0;
  LossWeights lambda;
};

struct EpochRecord {
  int epoch = 0;
  double total = 0, region = 0, boundary = 0, shape = 0, vessel = 0;
  LossWeights lambda;
  double seconds = 0;
  bool evaluated = false;
  double val_region_dice = 0, val_vessel_dice = 0;
};

struct RunRecord {
  std::string config_hash;
  std::string variant;
  int epochs_configured = 0;
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
  std::vector<LambdaUpdate> lambda_history;
  double wall_clock_seconds = 0;
  double val_region_dice = 0, val_vessel_dice = 0;
};

inline Json lambda_json(const LossWeights& w) { return Json::array({w.region, w.boundary, w.shape}); }

inline LossWeights lambda_from_json(const Json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

inline Json to_json(const StepRecord& s) {
  return Json{{"epoch", s.epoch},   {"step", s.step},   {"total", s.total},   {"region", s.region},
              {"boundary", s.boundary}, {"shape", s.shape}, {"vessel", s.vessel}, {"lambda", lambda_json(s.lambda)}};
}

inline StepRecord step_record_from_json(const Json& j) {
  StepRecord s;
  s.epoch = j.at("epoch").get<int>();
  s.step = j.at("step").get<int>();
  s.total = j.at("total").get<double>();
  s.region = j.at("region").get<double>();
  s.boundary = j.at("boundary").get<double>();
  s.shape = j.at("shape").get<double>();
  s.vessel = j.at("vessel").get<double>();
  s.lambda = lambda_from_json(j.at("lambda"));
  return s;
}

inline Json to_json(const EpochRecord& e) {
  Json j{{"epoch", e.epoch},       {"total", e.total},   {"region", e.region},
         {"boundary", e.boundary}, {"shape", e.shape},   {"vessel", e.vessel},
         {"lambda", lambda_json(e.lambda)}, {"seconds", e.seconds}};
  if (e.evaluated) {
    j["val_region_dice"] = e.val_region_dice;
    j["val_vessel_dice"] = e.val_vessel_dice;
  }
  return j;
}

inline EpochRecord epoch_record_from_json(const Json& j) {
  EpochRecord e;
  e.epoch = j.at("epoch").get<int>();
  e.total = j.at("total").get<double>();
  e.region = j.at("region").get<double>();
  e.boundary = j.at("boundary").get<double>();
  e.shape = j.at("shape").get<double>();
  e.vessel = j.at("vessel").get<double>();
  e.lambda = lambda_from_json(j.at("lambda"));
  e.seconds = j.at("seconds").get<double>();
  if (j.contains("val_region_dice")) {
    e.evaluated = true;
    e.val_region_dice = j.at("val_region_dice").get<double>();
    e.val_vessel_dice = j.at("val_vessel_dice").get<double>();
  }
  return e;
}

inline Json to_json(const RunRecord& r) {
  Json epochs = Json::array(), steps = Json::array(), lambda = Json::array();
  for (const auto& e : r.epochs) epochs.push_back(to_json(e));
  for (const auto& s : r.steps) steps.push_back(to_json(s));
  for (const auto& u : r.lambda_history) lambda.push_back(to_json(u));
  return Json{{"config_hash", r.config_hash},
              {"variant", r.variant},
              {"epochs_configured", r.epochs_configured},
              {"epochs", epochs},
              {"steps", steps},
              {"lambda_history", lambda},
              {"wall_clock_seconds", r.wall_clock_seconds},
              {"val_region_dice", r.val_region_dice},
              {"val_vessel_dice", r.val_vessel_dice}};
}

inline RunRecord run_record_from_json(const Json& j) {
  RunRecord r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.epochs_configured = j.at("epochs_configured").get<int>();
  for (const auto& e : j.at("epochs")) r.epochs.push_back(epoch_record_from_json(e));
  for (const auto& s : j.at("steps")) r.steps.push_back(step_record_from_json(s));
  for (const auto& u : j.at("lambda_history")) r.lambda_history.push_back(lambda_update_from_json(u));
  r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  r.val_region_dice = j.at("val_region_dice").get<double>();
  r.val_vessel_dice = j.at("val_vessel_dice").get<double>();
  return r;
}

/// Epochs at which a run of `epochs` epochs updates the loss weights.
inline std::vector<int> lambda_update_epochs(int epochs, int period) {
  std::vector<int> out;
  for (int e = period; e <= epochs; e += period) out.push_back(e);
  return out;
}

/// Mean Dice of region and vessel masks over a set of per-sample metrics.
inline std::pair<double, double> mean_dice(const std::vector<SampleMetrics>& m) {
  if (m.empty()) return {0.0, 0.0};
  double r = 0, v = 0;
  for (const auto& s : m) {
    r += s.region.dice;
    v += s.vessel.dice;
  }
  return {r / static_cast<double>(m.size()), v / static_cast<double>(m.size())};
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  if (!t.defined()) return true;
  for (T v : t.values())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

/// Joint end-to-end training of the cascade. Artifacts go to `out_dir`
/// (nothing is written when it is empty).
template <typename T>
class Trainer {
 public:
  Trainer(RunConfig cfg, DatasetSplit data, std::filesystem::path out_dir = {}, std::ostream* log = nullptr)
      : cfg_(std::move(cfg)),
        data_(std::move(data)),
        out_dir_(std::move(out_dir)),
        log_(log),
        model_(cfg_.model, cfg_.train.seed),
        adam_(nn::AdamOptions{.lr = cfg_.train.lr, .weight_decay = cfg_.train.weight_decay}) {
    cfg_.validate();
    if (data_.train.empty()) throw ValidationError("training split is empty");
    for (const auto* split : {&data_.train, &data_.val})
      for (const auto& s : *split)
        if (s.image.height != cfg_.train.input_size || s.image.width != cfg_.train.input_size)
          throw ShapeError("sample '" + s.id + "' is " + std::to_string(s.image.height) + "x" +
                           std::to_string(s.image.width) + ", the run expects " +
                           std::to_string(cfg_.train.input_size) + " square inputs");
    const Variant& v = cfg_.model.variant;
    state_.lambda = uniform_weights(v.boundary_task, v.shape_task);
    record_.config_hash = config_hash(cfg_);
    record_.variant = v.name;
    record_.epochs_configured = cfg_.train.epochs;
  }

  /// Loads weights, optimizer moments, variance maps and history. The
  /// checkpoint's model config and input size must match this run.
  void resume(const std::filesystem::path& checkpoint) {
    const CheckpointFile f = read_checkpoint_file(checkpoint);
    const RunConfig saved = checkpoint_config(f);
    if (to_json(saved)["model"] != to_json(cfg_)["model"] || saved.train.input_size != cfg_.train.input_size)
      throw LoadError("checkpoint " + checkpoint.string() + " was trained with a different model config");
    state_ = restore_checkpoint(f, model_, &adam_);
    if (state_.epoch > cfg_.train.epochs)
      throw ValidationError("checkpoint is at epoch " + std::to_string(state_.epoch) + ", beyond train.epochs");
    const std::size_t n = data_.train.size();
    const std::size_t px = static_cast<std::size_t>(cfg_.train.input_size) * cfg_.train.input_size;
    if (state_.arrays.count("v_region")) {
      v_maps_.assign(n, {});
      for (int task = 0; task < 4; ++task) {
        const auto it = state_.arrays.find(std::string("v_") + kTaskNames[task]);
        if (it == state_.arrays.end()) continue;
        if (it->second.size() != n * px) throw LoadError("checkpoint variance maps do not match the training split");
        for (std::size_t i = 0; i < n; ++i) {
          Grid g(cfg_.train.input_size, cfg_.train.input_size);
          std::copy_n(it->second.begin() + static_cast<std::ptrdiff_t>(i * px), px, g.data.begin());
          v_maps_[i][task] = std::move(g);
        }
      }
    }
    record_.steps.clear();
    record_.epochs.clear();
    if (state_.log.contains("epochs"))
      for (const auto& e : state_.log.at("epochs")) record_.epochs.push_back(epoch_record_from_json(e));
    if (state_.log.contains("steps"))
      for (const auto& s : state_.log.at("steps")) record_.steps.push_back(step_record_from_json(s));
    record_.wall_clock_seconds = state_.log.value("wall_clock_seconds", 0.0);
    centers_seeded_ = true;
  }

  /// Trains up to `stop_after` (0 = the configured epoch count).
  const RunRecord& run(int stop_after = 0) {
    const int last = stop_after > 0 ? std::min(stop_after, cfg_.train.epochs) : cfg_.train.epochs;
    if (!out_dir_.empty()) write_json_file(out_dir_ / "config.resolved.json", to_json(cfg_));
    if (!centers_seeded_) {
      model_.seed_graph_centers(batch_images(data_.train, first_n(data_.train.size(), cfg_.train.batch)), cfg_.train.seed);
      centers_seeded_ = true;
    }
    for (int epoch = state_.epoch + 1; epoch <= last; ++epoch) run_epoch(epoch, last);
    record_.lambda_history = state_.lambda_history;
    if (!out_dir_.empty()) write_artifacts();
    return record_;
  }

  MtgNet<T>& model() { return model_; }
  const RunConfig& config() const { return cfg_; }
  const TrainingState& state() const { return state_; }
  const RunRecord& record() const { return record_; }
  const DatasetSplit& data() const { return data_; }
  std::filesystem::path checkpoint_path() const { return out_dir_ / "checkpoint.mtgck"; }

 private:
  static constexpr const char* kTaskNames[4] = {"region", "boundary", "shape", "vessel"};
  using VMaps = std::array<Grid, 4>;

  static std::vector<std::size_t> first_n(std::size_t size, int n) {
    std::vector<std::size_t> idx(std::min(size, static_cast<std::size_t>(n)));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }

  static Tensor<T> batch_images(const std::vector<SampleRecord>& set, const std::vector<std::size_t>& idx) {
    std::vector<const Grid*> g;
    for (auto i : idx) g.push_back(&set[i].image);
    return stack_grids<T>(g);
  }

  void say(const std::string& line) {
    if (log_) *log_ << line << std::endl;
  }

  [[noreturn]] void diverged(const std::string& what, int epoch, int step) {
    throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                          ": first non-finite tensor is " + what);
  }

  void check_params(int epoch, int step) {
    for (const auto& p : model_.parameters().params)
      if (!all_finite(p.tensor)) diverged("parameter " + p.name, epoch, step);
  }

  void run_epoch(int epoch, int last) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& tc = cfg_.train;
    const Variant& variant = cfg_.model.variant;
    const EdgeOptions edges = edge_options(cfg_.data);
    std::vector<std::size_t> order(data_.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed({tc.seed, 0x5f1u, static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order.begin(), order.end());
    const bool staged = tc.two_stage;
    const bool vessel_stage = staged && epoch > tc.epochs / 2;

    EpochRecord er;
    er.epoch = epoch;
    er.lambda = state_.lambda;
    int step = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch), ++step) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch));
      std::vector<SampleRecord> batch;
      TaskVariances v;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        RigidTransform t;
        if (tc.augment) t = random_transform(derive_seed({tc.seed, static_cast<std::uint64_t>(epoch), idx}), tc.max_angle);
        batch.push_back(transform_sample(data_.train[idx], t, edges));
        if (!v_maps_.empty()) {
          std::vector<double>* dst[4] = {&v.region, &v.boundary, &v.shape, &v.vessel};
          for (int task = 0; task < 4; ++task) {
            const Grid& src = v_maps_[idx][task];
            if (src.size() == 0) continue;
            const Grid w = warp(src, t);
            dst[task]->insert(dst[task]->end(), w.data.begin(), w.data.end());
          }
        }
      }
      std::vector<const Grid*> img, reg, bou, shp, ves;
      for (const auto& s : batch) {
        img.push_back(&s.image);
        reg.push_back(&s.region_mask);
        bou.push_back(&s.boundary_map);
        shp.push_back(&s.shape_map);
        ves.push_back(&s.vessel_mask);
      }
      const Tensor<T> x = stack_grids<T>(img);
      TaskTargets<T> targets{stack_grids<T>(reg), variant.boundary_task ? stack_grids<T>(bou) : Tensor<T>{},
                             variant.shape_task ? stack_grids<T>(shp) : Tensor<T>{}, stack_grids<T>(ves)};

      Rng rng(derive_seed({tc.seed, 0x57e9u, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(step)}));
      nn::ForwardContext ctx;
      ctx.training = true;
      ctx.dropout_rate = cfg_.model.backbone.dropout_rate;
      ctx.rng = &rng;
      TaskPredictions<T> preds;
      if (!vessel_stage) {
        const CascadeOutput<T> o = model_.forward(x, CascadeMode::kTrain, ctx);
        preds = {o.region_prob, o.boundary_prob, o.shape_map, o.vessel_prob};
      } else {
        // Region branch frozen: running statistics, no dropout, no tape.
        RegionOutput<T> r;
        {
          NoGradGuard no_grad;
          r = model_.forward_region(x, nn::ForwardContext{});
        }
        preds = {r.region_prob, r.boundary_prob, r.shape_map,
                 model_.forward_vessel(x, r.region_prob, CascadeMode::kInfer, ctx).second};
      }
      const TaskLosses<T> losses = task_losses(preds, targets, v);
      Tensor<T> total;
      if (!staged) {
        total = total_loss(losses, state_.lambda);
      } else if (!vessel_stage) {
        TaskLosses<T> aux = losses;
        aux.vessel = Tensor<T>::scalar(T(0));
        total = total_loss(aux, state_.lambda);
      } else {
        total = losses.vessel;
      }

      if (!std::isfinite(static_cast<double>(total.item()))) {
        check_params(epoch, step);
        const std::pair<const char*, const Tensor<T>*> outputs[] = {
            {"region_prob", &preds.region}, {"boundary_prob", &preds.boundary}, {"shape_map", &preds.shape},
            {"vessel_prob", &preds.vessel}, {"region loss", &losses.region},     {"boundary loss", &losses.boundary},
            {"shape loss", &losses.shape},  {"vessel loss", &losses.vessel}};
        for (const auto& [name, t] : outputs)
          if (!all_finite(*t)) diverged(name, epoch, step);
        diverged("total loss", epoch, step);
      }
      model_.parameters().zero_grad();
      total.backward();
      adam_.step(model_.parameters());
      check_params(epoch, step);

      StepRecord sr{epoch,
                    step,
                    static_cast<double>(total.item()),
                    TaskLosses<T>::value(losses.region),
                    TaskLosses<T>::value(losses.boundary),
                    TaskLosses<T>::value(losses.shape),
                    TaskLosses<T>::value(losses.vessel),
                    state_.lambda};
      er.total += sr.total;
      er.region += sr.region;
      er.boundary += sr.boundary;
      er.shape += sr.shape;
      er.vessel += sr.vessel;
      if (tc.log_steps) record_.steps.push_back(sr);
    }
    for (double* f : {&er.total, &er.region, &er.boundary, &er.shape, &er.vessel}) *f /= std::max(step, 1);

    if (variant.uce && epoch % tc.weight_update_period == 0) update_uncertainty(epoch);

    if ((epoch % tc.eval_every == 0 || epoch == last) && !data_.val.empty()) {
      const auto [r, ves] = mean_dice(evaluate_samples(model_, data_.val, tc.batch));
      er.evaluated = true;
      er.val_region_dice = record_.val_region_dice = r;
      er.val_vessel_dice = record_.val_vessel_dice = ves;
    }
    er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record_.wall_clock_seconds += er.seconds;
    record_.epochs.push_back(er);
    state_.epoch = epoch;

    char line[256];
    std::snprintf(line, sizeof(line), "epoch %d/%d loss %.4f (reg %.4f bou %.4f shp %.4f ves %.4f) %.1fs", epoch,
                  tc.epochs, er.total, er.region, er.boundary, er.shape, er.vessel, er.seconds);
    std::string msg = line;
    if (er.evaluated) {
      std::snprintf(line, sizeof(line), " val dice reg %.4f ves %.4f", er.val_region_dice, er.val_vessel_dice);
      msg += line;
    }
    say(msg);
    if (!out_dir_.empty()) save();
  }

  /// MC-Dropout on a fixed held-out batch sets the loss weights; the
  /// per-pixel variance maps of the training images are refreshed for uce.
  void update_uncertainty(int epoch) {
    const auto& tc = cfg_.train;
    const Variant& variant = cfg_.model.variant;
    const auto& pool = data_.val.empty() ? data_.train : data_.val;
    const Tensor<T> xv = batch_images(pool, first_n(pool.size(), tc.lambda_batch));
    const TaskUncertainty u = summarize_samples(
        mc_sample(model_, xv, tc.mc_samples, derive_seed({tc.seed, 0x1au, static_cast<std::uint64_t>(epoch)}),
                  CascadeMode::kTrain, false));
    const auto mean_of = [](const UncertaintyMap& m) {
      return m.variance.empty() ? 0.0
                                : std::accumulate(m.variance.begin(), m.variance.end(), 0.0) /
                                      static_cast<double>(m.variance.size());
    };
    LambdaUpdate up;
    up.epoch = epoch;
    up.v_region = mean_of(u.region);
    up.v_boundary = mean_of(u.boundary);
    up.v_shape = mean_of(u.shape);
    up.weights = adaptive_weights(up.v_region, up.v_boundary, up.v_shape, variant.boundary_task, variant.shape_task);
    state_.lambda = up.weights;
    state_.lambda_history.push_back(up);
    char line[200];
    std::snprintf(line, sizeof(line), "lambda update at epoch %d: V = (%.3g, %.3g, %.3g) -> (%.4f, %.4f, %.4f)", epoch,
                  up.v_region, up.v_boundary, up.v_shape, up.weights.region, up.weights.boundary, up.weights.shape);
    say(line);

    const int n = static_cast<int>(data_.train.size());
    const int size = tc.input_size;
    v_maps_.assign(static_cast<std::size_t>(n), {});
    for (int start = 0; start < n; start += tc.batch) {
      std::vector<std::size_t> idx;
      for (int i = start; i < std::min(n, start + tc.batch); ++i) idx.push_back(static_cast<std::size_t>(i));
      const TaskUncertainty tu = summarize_samples(mc_sample(
          model_, batch_images(data_.train, idx), tc.uce_refresh_samples,
          derive_seed({tc.seed, 0x7efu, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(start)}),
          CascadeMode::kTrain, true));
      const UncertaintyMap* maps[4] = {&tu.region, &tu.boundary, &tu.shape, &tu.vessel};
      for (std::size_t s = 0; s < idx.size(); ++s)
        for (int task = 0; task < 4; ++task)
          if (!maps[task]->variance.empty())
            v_maps_[idx[s]][task] = grid_from_values(maps[task]->variance, static_cast<int>(s), size, size);
    }
  }

  void save() {
    state_.arrays.clear();
    if (!v_maps_.empty()) {
      for (int task = 0; task < 4; ++task) {
        if (v_maps_.front()[task].size() == 0) continue;
        auto& arr = state_.arrays[std::string("v_") + kTaskNames[task]];
        for (const auto& m : v_maps_) arr.insert(arr.end(), m[task].data.begin(), m[task].data.end());
      }
    }
    Json epochs = Json::array(), steps = Json::array();
    for (const auto& e : record_.epochs) epochs.push_back(to_json(e));
    for (const auto& s : record_.steps) steps.push_back(to_json(s));
    state_.log = Json{{"epochs", epochs}, {"steps", steps}, {"wall_clock_seconds", record_.wall_clock_seconds}};
    save_checkpoint(checkpoint_path(), cfg_, model_, &adam_, state_);
    state_.arrays.clear();
  }

  void write_artifacts() const {
    write_json_file(out_dir_ / "run_record.json", to_json(record_));
    {
      std::ofstream out(out_dir_ / "epochs.csv");
      out << "epoch,total,region,boundary,shape,vessel,lambda_region,lambda_boundary,lambda_shape,seconds,"
             "val_region_dice,val_vessel_dice\n";
      for (const auto& e : record_.epochs) {
        out << e.epoch << ',' << e.total << ',' << e.region << ',' << e.boundary << ',' << e.shape << ',' << e.vessel
            << ',' << e.lambda.region << ',' << e.lambda.boundary << ',' << e.lambda.shape << ',' << e.seconds << ',';
        if (e.evaluated) out << e.val_region_dice << ',' << e.val_vessel_dice;
        else out << ',';
        out << '\n';
      }
    }
    {
      std::ofstream out(out_dir_ / "steps.csv");
      out.precision(10);
      out << "epoch,step,total,region,boundary,shape,vessel,lambda_region,lambda_boundary,lambda_shape\n";
      for (const auto& s : record_.steps)
        out << s.epoch << ',' << s.step << ',' << s.total << ',' << s.region << ',' << s.boundary << ',' << s.shape
            << ',' << s.vessel << ',' << s.lambda.region << ',' << s.lambda.boundary << ',' << s.lambda.shape << '\n';
    }
    {
      std::ofstream out(out_dir_ / "lambda.csv");
      out.precision(12);
      out << "epoch,v_region,v_boundary,v_shape,lambda_region,lambda_boundary,lambda_shape\n";
      for (const auto& u : state_.lambda_history)
        out << u.epoch << ',' << u.v_region << ',' << u.v_boundary << ',' << u.v_shape << ',' << u.weights.region
            << ',' << u.weights.boundary << ',' << u.weights.shape << '\n';
    }
  }

  RunConfig cfg_;
  DatasetSplit data_;
  std::filesystem::path out_dir_;
  std::ostream* log_ = nullptr;
  MtgNet<T> model_;
  nn::Adam<T> adam_;
  TrainingState state_;
  RunRecord record_;
  std::vector<VMaps> v_maps_;
  bool centers_seeded_ = false;
};

}  // namespace mtg
