#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtgnet/core/error.hpp"
#include "mtgnet/core/rng.hpp"
#include "mtgnet/data/array_io.hpp"
#include "mtgnet/data/png_io.hpp"
#include "mtgnet/data/synth.hpp"

namespace mtg {

struct DatasetSplit {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> val;
  std::vector<SampleRecord> test;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

/// Floor for train (60%) and val (10%); the remainder goes to test.
inline SplitCounts split_counts(std::size_t n) {
  SplitCounts c;
  c.train = n * 6 / 10;
  c.val = n / 10;
  c.test = n - c.train - c.val;
  return c;
}

/// Sorts by id, shuffles with `seed`, then cuts train / val / test.
inline DatasetSplit split_records(std::vector<SampleRecord> records, std::uint64_t seed) {
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].id == records[i - 1].id) throw ValidationError("duplicate sample id '" + records[i].id + "'");
  Rng rng(derive_seed({0x5b117u, seed}));
  rng.shuffle(records.begin(), records.end());
  const SplitCounts c = split_counts(records.size());
  DatasetSplit out;
  auto it = std::make_move_iterator(records.begin());
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(c.train));
  out.val.assign(it + static_cast<std::ptrdiff_t>(c.train), it + static_cast<std::ptrdiff_t>(c.train + c.val));
  out.test.assign(it + static_cast<std::ptrdiff_t>(c.train + c.val), std::make_move_iterator(records.end()));
  return out;
}

struct LoadOptions {
  /// Resample every sample to this square size (0 keeps the native size).
  int resize_to = 0;
  EdgeOptions edges;
  SdfOptions sdf;
  /// Store / reuse derived boundary and shape maps under <root>/derived/.
  bool cache_derived = true;
};

namespace detail {

inline Grid load_mask(const std::filesystem::path& p, const std::string& id, const std::string& kind) {
  if (!std::filesystem::exists(p)) throw LoadError("sample '" + id + "': missing " + kind + " mask " + p.string());
  return threshold(read_png_gray(p.string()), 0.5);
}

}  // namespace detail

/// Lists ids (file stems) under <root>/images, sorted.
inline std::vector<std::string> list_dataset_ids(const std::filesystem::path& root) {
  const auto dir = root / "images";
  if (!std::filesystem::is_directory(dir)) throw IoError("no images/ directory under " + root.string());
  std::vector<std::string> ids;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline SampleRecord load_sample(const std::filesystem::path& root, const std::string& id, const LoadOptions& opts = {}) {
  SampleRecord s;
  s.id = id;
  s.image = read_png_gray((root / "images" / (id + ".png")).string());
  s.region_mask = detail::load_mask(root / "region" / (id + ".png"), id, "region");
  s.vessel_mask = detail::load_mask(root / "vessel" / (id + ".png"), id, "vessel");
  if (!s.region_mask.same_shape(s.image) || !s.vessel_mask.same_shape(s.image))
    throw LoadError("sample '" + id + "': image and mask sizes differ");
  if (opts.resize_to > 0 && (s.image.height != opts.resize_to || s.image.width != opts.resize_to)) {
    s.image = resize_bilinear(s.image, opts.resize_to, opts.resize_to);
    s.region_mask = threshold(resize_bilinear(s.region_mask, opts.resize_to, opts.resize_to), 0.5);
    s.vessel_mask = threshold(resize_bilinear(s.vessel_mask, opts.resize_to, opts.resize_to), 0.5);
  }
  const auto cache = root / "derived" / to_string(opts.edges.method) /
                     (std::to_string(s.image.height) + "x" + std::to_string(s.image.width));
  if (opts.cache_derived && std::filesystem::exists(cache / (id + ".boundary.json")) &&
      std::filesystem::exists(cache / (id + ".shape.json"))) {
    s.boundary_map = load_grid(cache / (id + ".boundary"));
    s.shape_map = load_grid(cache / (id + ".shape"));
    if (s.boundary_map.same_shape(s.image) && s.shape_map.same_shape(s.image)) return s;
  }
  derive_targets(s, opts.edges, opts.sdf);
  if (opts.cache_derived) {
    std::error_code ec;
    std::filesystem::create_directories(cache, ec);
    if (!ec) {
      save_grid(cache / (id + ".boundary"), s.boundary_map);
      save_grid(cache / (id + ".shape"), s.shape_map);
    }
  }
  return s;
}

inline DatasetSplit load_dataset(const std::filesystem::path& root, std::uint64_t split_seed, const LoadOptions& opts = {}) {
  std::vector<SampleRecord> records;
  for (const auto& id : list_dataset_ids(root)) records.push_back(load_sample(root, id, opts));
  return split_records(std::move(records), split_seed);
}

/// Writes records in the on-disk dataset layout.
inline void write_dataset(const std::filesystem::path& root, const std::vector<SampleRecord>& records) {
  for (const char* sub : {"images", "region", "vessel"}) std::filesystem::create_directories(root / sub);
  for (const auto& r : records) {
    write_png_gray((root / "images" / (r.id + ".png")).string(), r.image);
    write_png_gray((root / "region" / (r.id + ".png")).string(), r.region_mask);
    write_png_gray((root / "vessel" / (r.id + ".png")).string(), r.vessel_mask);
  }
}

}  // namespace mtg
