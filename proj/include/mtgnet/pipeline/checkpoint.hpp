#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "mtgnet/core/version.hpp"
#include "mtgnet/loss/uncertainty.hpp"
#include "mtgnet/nn/adam.hpp"
#include "mtgnet/pipeline/config.hpp"

namespace mtg {

/// File layout: 8-byte magic, u32 format version, u64 header length, JSON
/// header, then raw little-endian tensor data at the offsets the header lists.
inline constexpr char kCheckpointMagic[8] = {'M', 'T', 'G', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointFormat = 1;

struct LambdaUpdate {
  int epoch = 0;
  double v_region = 0, v_boundary = 0, v_shape = 0;
  LossWeights weights;
};

/// Training progress stored next to the weights so a run can resume.
struct TrainingState {
  int epoch = 0;  // completed epochs
  LossWeights lambda;
  std::vector<LambdaUpdate> lambda_history;
  /// Named auxiliary arrays (e.g. uce variance maps).
  std::map<std::string, std::vector<double>> arrays;
  /// Free-form history carried across resumes (per-epoch records etc.).
  Json log = Json::object();
};

inline Json to_json(const LambdaUpdate& u) {
  return Json{{"epoch", u.epoch},
              {"v_region", u.v_region},
              {"v_boundary", u.v_boundary},
              {"v_shape", u.v_shape},
              {"lambda", {u.weights.region, u.weights.boundary, u.weights.shape}}};
}

inline LambdaUpdate lambda_update_from_json(const Json& j) {
  LambdaUpdate u;
  u.epoch = j.at("epoch").get<int>();
  u.v_region = j.at("v_region").get<double>();
  u.v_boundary = j.at("v_boundary").get<double>();
  u.v_shape = j.at("v_shape").get<double>();
  const auto l = j.at("lambda").get<std::vector<double>>();
  u.weights = {l.at(0), l.at(1), l.at(2)};
  return u;
}

namespace detail {

template <typename U>
void write_le(std::ostream& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U read_le(std::istream& in) {
  unsigned char b[sizeof(U)];
  in.read(reinterpret_cast<char*>(b), sizeof(U));
  if (!in) throw LoadError("checkpoint is truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  U v;
  std::memcpy(&v, b, sizeof(U));
  return v;
}

struct BlobEntry {
  std::string name;
  std::vector<int> shape;
  std::string dtype;  // float32 or float64
  std::vector<double> values;
};

inline std::vector<int> shape_dims(const Shape& s) {
  std::vector<int> d;
  for (int i = 0; i < s.rank(); ++i) d.push_back(s[i]);
  return d;
}

}  // namespace detail

/// Writes weights, batch-norm statistics, optional Adam moments and the
/// training state to a single file.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, MtgNet<T>& model,
                     const nn::Adam<T>* adam, const TrainingState& state) {
  using detail::BlobEntry;
  std::vector<BlobEntry> blobs;
  auto& ps = model.parameters();
  for (const auto& p : ps.params)
    blobs.push_back({"param/" + p.name, detail::shape_dims(p.tensor.shape()), "float32",
                     std::vector<double>(p.tensor.values().begin(), p.tensor.values().end())});
  for (const auto& b : ps.buffers)
    blobs.push_back({"buffer/" + b.name, {static_cast<int>(b.data->size())}, "float32",
                     std::vector<double>(b.data->begin(), b.data->end())});
  Json optimizer = nullptr;
  if (adam && adam->steps() > 0) {
    auto& a = const_cast<nn::Adam<T>&>(*adam);
    for (std::size_t k = 0; k < ps.params.size(); ++k) {
      const int n = static_cast<int>(a.first_moments()[k].size());
      blobs.push_back({"adam_m/" + ps.params[k].name, {n}, "float64", a.first_moments()[k]});
      blobs.push_back({"adam_v/" + ps.params[k].name, {n}, "float64", a.second_moments()[k]});
    }
    optimizer = Json{{"steps", a.steps()}, {"lr", a.options().lr}};
  }
  for (const auto& [name, arr] : state.arrays)
    blobs.push_back({"array/" + name, {static_cast<int>(arr.size())}, "float64", arr});

  Json index = Json::array();
  std::uint64_t offset = 0;
  for (const auto& b : blobs) {
    index.push_back({{"name", b.name}, {"shape", b.shape}, {"dtype", b.dtype}, {"offset", offset}, {"count", b.values.size()}});
    offset += b.values.size() * (b.dtype == "float32" ? 4 : 8);
  }
  Json history = Json::array();
  for (const auto& u : state.lambda_history) history.push_back(to_json(u));
  const Json header{{"format", kCheckpointFormat},
                    {"code_version", kVersion},
                    {"config", to_json(config)},
                    {"config_hash", config_hash(config)},
                    {"tensors", index},
                    {"optimizer", optimizer},
                    {"state",
                     {{"epoch", state.epoch},
                      {"lambda", {state.lambda.region, state.lambda.boundary, state.lambda.shape}},
                      {"lambda_history", history},
                      {"log", state.log}}}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, 8);
    detail::write_le<std::uint32_t>(out, kCheckpointFormat);
    detail::write_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : blobs)
      for (double v : b.values) {
        if (b.dtype == "float32") detail::write_le<float>(out, static_cast<float>(v));
        else detail::write_le<double>(out, v);
      }
    if (!out) throw IoError("failed while writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct CheckpointFile {
  Json header;
  std::map<std::string, detail::BlobEntry> blobs;
};

/// Reads and validates the container; tensor payloads are kept as doubles.
inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw LoadError(path.string() + " is not an mtgnet checkpoint");
  const auto format = detail::read_le<std::uint32_t>(in);
  if (format != kCheckpointFormat)
    throw LoadError("checkpoint format " + std::to_string(format) + " is not supported (expected " +
                    std::to_string(kCheckpointFormat) + ")");
  const auto len = detail::read_le<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw LoadError("checkpoint header is truncated");
  CheckpointFile f;
  try {
    f.header = Json::parse(text);
  } catch (const Json::exception& e) {
    throw LoadError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const std::string version = f.header.value("code_version", "");
  const int major = version.empty() ? -1 : std::stoi(version.substr(0, version.find('.')));
  if (major != kVersionMajor)
    throw LoadError("checkpoint written by mtgnet " + version + ", incompatible with " + kVersion);
  const auto base = in.tellg();
  for (const auto& e : f.header.at("tensors")) {
    detail::BlobEntry b;
    b.name = e.at("name").get<std::string>();
    b.shape = e.at("shape").get<std::vector<int>>();
    b.dtype = e.at("dtype").get<std::string>();
    const auto count = e.at("count").get<std::size_t>();
    in.seekg(base + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    b.values.resize(count);
    for (auto& v : b.values) v = b.dtype == "float32" ? detail::read_le<float>(in) : detail::read_le<double>(in);
    f.blobs.emplace(b.name, std::move(b));
  }
  return f;
}

inline RunConfig checkpoint_config(const CheckpointFile& f) { return run_config_from_json(f.header.at("config")); }

/// Restores weights (and, when given, optimizer moments) into a model built
/// from the checkpoint's own config. Any name or shape mismatch is a LoadError.
template <typename T>
TrainingState restore_checkpoint(const CheckpointFile& f, MtgNet<T>& model, nn::Adam<T>* adam = nullptr) {
  auto& ps = model.parameters();
  auto fetch = [&](const std::string& name, std::size_t count) -> const detail::BlobEntry& {
    const auto it = f.blobs.find(name);
    if (it == f.blobs.end()) throw LoadError("checkpoint lacks tensor '" + name + "'");
    if (it->second.values.size() != count)
      throw LoadError("checkpoint tensor '" + name + "' has " + std::to_string(it->second.values.size()) +
                      " values, the model expects " + std::to_string(count));
    return it->second;
  };
  std::size_t expected = 0;
  for (auto& p : ps.params) {
    const auto& b = fetch("param/" + p.name, p.tensor.numel());
    if (b.shape != detail::shape_dims(p.tensor.shape())) throw LoadError("checkpoint tensor '" + p.name + "' has a different shape");
    auto& v = p.tensor.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(b.values[i]);
    ++expected;
  }
  for (auto& buf : ps.buffers) {
    const auto& b = fetch("buffer/" + buf.name, buf.data->size());
    for (std::size_t i = 0; i < buf.data->size(); ++i) (*buf.data)[i] = static_cast<T>(b.values[i]);
    ++expected;
  }
  std::size_t stored = 0;
  for (const auto& [name, _] : f.blobs)
    if (name.rfind("param/", 0) == 0 || name.rfind("buffer/", 0) == 0) ++stored;
  if (stored != expected)
    throw LoadError("checkpoint holds " + std::to_string(stored) + " model tensors, the model has " + std::to_string(expected));

  const Json& opt = f.header.at("optimizer");
  if (adam && !opt.is_null()) {
    auto& m = adam->first_moments();
    auto& v = adam->second_moments();
    m.clear();
    v.clear();
    for (const auto& p : ps.params) {
      m.push_back(fetch("adam_m/" + p.name, p.tensor.numel()).values);
      v.push_back(fetch("adam_v/" + p.name, p.tensor.numel()).values);
    }
    adam->set_steps(opt.at("steps").get<std::int64_t>());
  }

  TrainingState st;
  const Json& s = f.header.at("state");
  st.epoch = s.at("epoch").get<int>();
  const auto l = s.at("lambda").get<std::vector<double>>();
  st.lambda = {l.at(0), l.at(1), l.at(2)};
  for (const auto& u : s.at("lambda_history")) st.lambda_history.push_back(lambda_update_from_json(u));
  st.log = s.value("log", Json::object());
  for (const auto& [name, b] : f.blobs)
    if (name.rfind("array/", 0) == 0) st.arrays[name.substr(6)] = b.values;
  return st;
}

template <typename T>
struct LoadedModel {
  RunConfig config;
  std::unique_ptr<MtgNet<T>> model;
  TrainingState state;
};

/// Builds the model described by a checkpoint and loads its weights.
template <typename T>
LoadedModel<T> load_model(const std::filesystem::path& path) {
  const CheckpointFile f = read_checkpoint_file(path);
  LoadedModel<T> out;
  out.config = checkpoint_config(f);
  out.model = std::make_unique<MtgNet<T>>(out.config.model, out.config.train.seed);
  out.state = restore_checkpoint(f, *out.model);
  return out;
}

}  // namespace mtg
