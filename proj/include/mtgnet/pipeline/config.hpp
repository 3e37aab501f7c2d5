#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtgnet/core/error.hpp"
#include "mtgnet/data/boundary.hpp"
#include "mtgnet/data/synth.hpp"
#include "mtgnet/model/mtgnet.hpp"

namespace mtg {

using Json = nlohmann::json;

struct TrainConfig {
  int epochs = 60;
  int batch = 4;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int input_size = 64;
  /// MC-Dropout passes for the adaptive loss weights and for inference.
  int mc_samples = 10;
  /// Epochs between loss-weight updates.
  int weight_update_period = 10;
  std::uint64_t seed = 0;
  bool augment = true;
  double max_angle = 45.0;
  /// MC passes per training image when refreshing the uce variance maps.
  int uce_refresh_samples = 4;
  /// Size of the fixed validation batch used for the loss weights.
  int lambda_batch = 4;
  /// Validation metrics every n epochs (and always after the last one).
  int eval_every = 5;
  /// Train the region branch alone for the first half, then only the vessel branch.
  bool two_stage = false;
  /// Keep per-step losses in the run record.
  bool log_steps = true;

  void validate() const {
    if (epochs < 1) throw ValidationError("train.epochs must be >= 1");
    if (batch < 1) throw ValidationError("train.batch must be >= 1");
    if (!(lr > 0)) throw ValidationError("train.lr must be > 0");
    if (!(weight_decay >= 0)) throw ValidationError("train.weight_decay must be >= 0");
    if (input_size < 16 || input_size % 16 != 0) throw ValidationError("train.input_size must be a positive multiple of 16");
    if (mc_samples < 1) throw ValidationError("train.mc_samples must be >= 1");
    if (weight_update_period < 1) throw ValidationError("train.weight_update_period must be >= 1");
    if (!(max_angle >= 0 && max_angle <= 180)) throw ValidationError("train.max_angle must lie in [0, 180]");
    if (uce_refresh_samples < 1) throw ValidationError("train.uce_refresh_samples must be >= 1");
    if (lambda_batch < 1) throw ValidationError("train.lambda_batch must be >= 1");
    if (eval_every < 1) throw ValidationError("train.eval_every must be >= 1");
  }
};

struct DataConfig {
  /// Dataset root with images/, region/, vessel/; empty means synthetic data.
  std::string root;
  std::uint64_t split_seed = 0;
  int synthetic_count = 200;
  std::uint64_t synthetic_seed = 1000;
  SynthSpec synth;
  std::string edge_method = "morphological";
  bool cache_derived = true;

  void validate() const {
    if (root.empty() && synthetic_count < 3) throw ValidationError("data.synthetic_count must be >= 3");
    edge_method_from_string(edge_method);
    mtg::validate(synth);
  }
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  void validate() const {
    model.validate();
    train.validate();
    data.validate();
  }
};

inline Json to_json(const RunConfig& c) {
  const auto& bb = c.model.backbone;
  const auto& g = c.model.graph;
  const auto& t = c.train;
  const auto& d = c.data;
  return Json{
      {"model",
       {{"variant", c.model.variant.name},
        {"backbone",
         {{"base_channels", bb.base_channels},
          {"routed_channels", bb.routed_channels},
          {"width_cap", bb.width_cap},
          {"aux_decoder_width", bb.aux_decoder_width},
          {"dropout_rate", bb.dropout_rate},
          {"nested_dilations", bb.nested_dilations}}},
        {"graph",
         {{"nodes", g.nodes},
          {"hidden", g.hidden},
          {"activation", to_string(g.activation)},
          {"support_top_k", g.support_top_k},
          {"fuse_concat", g.fuse_concat}}}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch", t.batch},
        {"lr", t.lr},
        {"weight_decay", t.weight_decay},
        {"input_size", t.input_size},
        {"mc_samples", t.mc_samples},
        {"weight_update_period", t.weight_update_period},
        {"seed", t.seed},
        {"augment", t.augment},
        {"max_angle", t.max_angle},
        {"uce_refresh_samples", t.uce_refresh_samples},
        {"lambda_batch", t.lambda_batch},
        {"eval_every", t.eval_every},
        {"two_stage", t.two_stage},
        {"log_steps", t.log_steps}}},
      {"data",
       {{"root", d.root},
        {"split_seed", d.split_seed},
        {"synthetic_count", d.synthetic_count},
        {"synthetic_seed", d.synthetic_seed},
        {"n_blobs", d.synth.n_blobs},
        {"vessel_density", d.synth.vessel_density},
        {"noise_level", d.synth.noise_level},
        {"artifact_level", d.synth.artifact_level},
        {"edge_method", d.edge_method},
        {"cache_derived", d.cache_derived}}}};
}

namespace detail {

template <typename V>
void read_key(const Json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const Json::exception&) {
    throw ValidationError("config key " + where + "." + key + " has the wrong type");
  }
}

/// Rejects keys of `j` that do not appear in `reference`, recursively.
inline void check_known_keys(const Json& j, const Json& reference, const std::string& where) {
  if (!j.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!reference.contains(it.key())) throw ValidationError("unknown config key '" + path + "'");
    if (reference.at(it.key()).is_object()) {
      if (!it.value().is_object()) throw ValidationError("config key '" + path + "' must be an object");
      check_known_keys(it.value(), reference.at(it.key()), path);
    }
  }
}

}  // namespace detail

/// Parses a (possibly partial) config; missing keys keep their defaults.
inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  detail::check_known_keys(j, to_json(c), "");
  if (j.contains("model")) {
    const Json& m = j.at("model");
    std::string variant = c.model.variant.name;
    detail::read_key(m, "variant", variant, "model");
    c.model.variant = variant_from_name(variant);
    if (m.contains("backbone")) {
      const Json& b = m.at("backbone");
      auto& bb = c.model.backbone;
      detail::read_key(b, "base_channels", bb.base_channels, "model.backbone");
      detail::read_key(b, "routed_channels", bb.routed_channels, "model.backbone");
      detail::read_key(b, "width_cap", bb.width_cap, "model.backbone");
      detail::read_key(b, "aux_decoder_width", bb.aux_decoder_width, "model.backbone");
      detail::read_key(b, "dropout_rate", bb.dropout_rate, "model.backbone");
      detail::read_key(b, "nested_dilations", bb.nested_dilations, "model.backbone");
    }
    if (m.contains("graph")) {
      const Json& g = m.at("graph");
      auto& gc = c.model.graph;
      detail::read_key(g, "nodes", gc.nodes, "model.graph");
      detail::read_key(g, "hidden", gc.hidden, "model.graph");
      std::string act = to_string(gc.activation);
      detail::read_key(g, "activation", act, "model.graph");
      gc.activation = activation_from_string(act);
      detail::read_key(g, "support_top_k", gc.support_top_k, "model.graph");
      detail::read_key(g, "fuse_concat", gc.fuse_concat, "model.graph");
    }
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    auto& tc = c.train;
    detail::read_key(t, "epochs", tc.epochs, "train");
    detail::read_key(t, "batch", tc.batch, "train");
    detail::read_key(t, "lr", tc.lr, "train");
    detail::read_key(t, "weight_decay", tc.weight_decay, "train");
    detail::read_key(t, "input_size", tc.input_size, "train");
    detail::read_key(t, "mc_samples", tc.mc_samples, "train");
    detail::read_key(t, "weight_update_period", tc.weight_update_period, "train");
    detail::read_key(t, "seed", tc.seed, "train");
    detail::read_key(t, "augment", tc.augment, "train");
    detail::read_key(t, "max_angle", tc.max_angle, "train");
    detail::read_key(t, "uce_refresh_samples", tc.uce_refresh_samples, "train");
    detail::read_key(t, "lambda_batch", tc.lambda_batch, "train");
    detail::read_key(t, "eval_every", tc.eval_every, "train");
    detail::read_key(t, "two_stage", tc.two_stage, "train");
    detail::read_key(t, "log_steps", tc.log_steps, "train");
  }
  if (j.contains("data")) {
    const Json& d = j.at("data");
    auto& dc = c.data;
    detail::read_key(d, "root", dc.root, "data");
    detail::read_key(d, "split_seed", dc.split_seed, "data");
    detail::read_key(d, "synthetic_count", dc.synthetic_count, "data");
    detail::read_key(d, "synthetic_seed", dc.synthetic_seed, "data");
    detail::read_key(d, "n_blobs", dc.synth.n_blobs, "data");
    detail::read_key(d, "vessel_density", dc.synth.vessel_density, "data");
    detail::read_key(d, "noise_level", dc.synth.noise_level, "data");
    detail::read_key(d, "artifact_level", dc.synth.artifact_level, "data");
    detail::read_key(d, "edge_method", dc.edge_method, "data");
    detail::read_key(d, "cache_derived", dc.cache_derived, "data");
  }
  c.data.synth.image_size = c.train.input_size;
  c.validate();
  return c;
}

/// Applies "a.b.c=value" to a JSON tree. The value is parsed as JSON when
/// possible (numbers, booleans, arrays) and taken as a string otherwise.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::exception&) {
    value = raw;
  }
  Json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ValidationError("override '" + key + "' descends into a non-object");
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ValidationError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

/// Defaults, then the optional file, then the overrides in order.
inline RunConfig resolve_config(const std::string& file, const std::vector<std::string>& overrides) {
  Json j = to_json(RunConfig{});
  if (!file.empty()) j.merge_patch(read_json_file(file));
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

/// FNV-1a over the canonical JSON dump, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mtg
