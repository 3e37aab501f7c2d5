#pragma once

#include <vector>

#include "mtgnet/data/dataset.hpp"
#include "mtgnet/pipeline/config.hpp"

namespace mtg {

inline EdgeOptions edge_options(const DataConfig& d) {
  EdgeOptions e;
  e.method = edge_method_from_string(d.edge_method);
  return e;
}

/// `synthetic_count` samples with seeds synthetic_seed, synthetic_seed + 1, ...
inline std::vector<SampleRecord> synthesize_records(const DataConfig& d) {
  std::vector<SampleRecord> out;
  out.reserve(static_cast<std::size_t>(d.synthetic_count));
  const EdgeOptions edges = edge_options(d);
  for (int i = 0; i < d.synthetic_count; ++i) {
    SampleRecord s = generate_synthetic_sample(d.synthetic_seed + static_cast<std::uint64_t>(i), d.synth);
    if (edges.method != EdgeMethod::kMorphological) derive_targets(s, edges);
    out.push_back(std::move(s));
  }
  return out;
}

/// Train / val / test split of the configured data source, resampled to the
/// training input size.
inline DatasetSplit prepare_dataset(const RunConfig& c) {
  if (c.data.root.empty()) return split_records(synthesize_records(c.data), c.data.split_seed);
  LoadOptions opts;
  opts.resize_to = c.train.input_size;
  opts.edges = edge_options(c.data);
  opts.cache_derived = c.data.cache_derived;
  DatasetSplit split = load_dataset(c.data.root, c.data.split_seed, opts);
  if (split.train.empty() || split.val.empty())
    throw ValidationError("dataset under " + c.data.root + " is too small to split (need at least 10 samples)");
  return split;
}

}  // namespace mtg
