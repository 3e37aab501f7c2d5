#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtgnet/core/error.hpp"
#include "mtgnet/data/grid.hpp"

namespace mtg {

namespace detail {

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  return v;
}

}  // namespace detail

/// Float array as `<base>.f32` (raw little-endian float32) plus a `<base>.json`
/// sidecar recording shape and dtype.
inline void save_float_array(const std::filesystem::path& base, const std::vector<int>& shape,
                             const std::vector<double>& values) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  if (n != values.size()) throw ShapeError("save_float_array: shape does not match value count");
  std::filesystem::path bin = base, meta = base;
  bin += ".f32";
  meta += ".json";
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw IoError("cannot write " + bin.string());
    for (double v : values) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      bits = detail::to_little(bits);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  nlohmann::json j;
  j["dtype"] = "float32";
  j["byte_order"] = "little";
  j["shape"] = shape;
  j["data"] = bin.filename().string();
  std::ofstream m(meta);
  if (!m) throw IoError("cannot write " + meta.string());
  m << j.dump(2) << '\n';
}

inline void save_grid(const std::filesystem::path& base, const Grid& g) {
  save_float_array(base, {g.height, g.width}, g.data);
}

struct FloatArray {
  std::vector<int> shape;
  std::vector<double> values;
};

inline FloatArray load_float_array(const std::filesystem::path& base) {
  std::filesystem::path bin = base, meta = base;
  bin += ".f32";
  meta += ".json";
  std::ifstream m(meta);
  if (!m) throw IoError("cannot open " + meta.string());
  nlohmann::json j;
  try {
    m >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad sidecar " + meta.string() + ": " + e.what());
  }
  if (j.value("dtype", "") != "float32") throw IoError("unsupported dtype in " + meta.string());
  FloatArray arr;
  arr.shape = j.at("shape").get<std::vector<int>>();
  std::size_t n = 1;
  for (int d : arr.shape) n *= static_cast<std::size_t>(d);
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError("cannot open " + bin.string());
  arr.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits;
    if (!in.read(reinterpret_cast<char*>(&bits), 4)) throw IoError("truncated array " + bin.string());
    bits = detail::to_little(bits);
    float f;
    std::memcpy(&f, &bits, 4);
    arr.values[i] = f;
  }
  return arr;
}

inline Grid load_grid(const std::filesystem::path& base) {
  FloatArray a = load_float_array(base);
  if (a.shape.size() != 2) throw ShapeError("expected a 2-D array in " + base.string());
  Grid g(a.shape[0], a.shape[1]);
  g.data = std::move(a.values);
  return g;
}

}  // namespace mtg
