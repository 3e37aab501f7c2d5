#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "mtgnet/model/migr.hpp"

namespace mtg {

template <typename T>
struct HeadMaps {
  Tensor<T> boundary_logits, boundary;  // (N, 1, h, w); boundary = sigmoid(logits)
  Tensor<T> shape_logits, shape;
};

/// Per-pixel fully connected heads (1x1 convolutions) with sigmoid output.
template <typename T>
class TaskHeads {
 public:
  TaskHeads() = default;
  TaskHeads(int channels, bool with_shape, Rng& rng) : bou_(channels, 1, 1, 1, rng, true) {
    if (with_shape) shp_ = nn::Conv2d<T>(channels, 1, 1, 1, rng, true);
  }

  HeadMaps<T> operator()(const Tensor<T>& f_bou, const Tensor<T>& f_shp) const {
    HeadMaps<T> h;
    h.boundary_logits = bou_(f_bou);
    h.boundary = ops::sigmoid(h.boundary_logits);
    if (f_shp.defined() && shp_.weight().defined()) {
      h.shape_logits = shp_(f_shp);
      h.shape = ops::sigmoid(h.shape_logits);
    }
    return h;
  }

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) const {
    bou_.collect(ps, prefix + ".boundary");
    if (shp_.weight().defined()) shp_.collect(ps, prefix + ".shape");
  }

  nn::Conv2d<T>& boundary() { return bou_; }
  nn::Conv2d<T>& shape() { return shp_; }

 private:
  nn::Conv2d<T> bou_, shp_;
};

/// Scales every channel of `fused` (N, C, h, w) by the single-channel `map`.
template <typename T>
Tensor<T> gate_features(const Tensor<T>& map, const Tensor<T>& fused) {
  return ops::mul_channel_map(fused, map);
}

/// K support nodes (C x K) of a gated feature matrix (P x C).
template <typename T>
Tensor<T> build_support_nodes(const Tensor<T>& gated, const ProjectionParams<T>& proj) {
  return proj.project(gated).nodes;
}

/// The two learnable maps of one reinforcement branch:
/// f_w: C -> C on differences and f_eta: 2C -> C on [f | E], both Linear + ReLU.
template <typename T>
struct EnhanceParams {
  nn::Linear<T> f_w, f_eta;

  EnhanceParams() = default;
  EnhanceParams(int channels, Rng& rng) : f_w(channels, channels, rng), f_eta(2 * channels, channels, rng) {}

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) const {
    f_w.collect(ps, prefix + ".f_w");
    f_eta.collect(ps, prefix + ".f_eta");
  }
};

namespace detail {

/// Elementwise max over the candidates allowed per row; `allowed[m][r]`
/// says whether candidate m may win in row r. Ties go to the lowest index.
template <typename T>
Tensor<T> masked_row_max(const std::vector<Tensor<T>>& xs, const std::vector<std::vector<char>>& allowed) {
  const int rows = xs.front().dim(0), cols = xs.front().dim(1);
  std::vector<T> out(static_cast<std::size_t>(rows) * cols, T(0));
  std::vector<int> arg(out.size(), -1);
  for (std::size_t m = 0; m < xs.size(); ++m)
    for (int r = 0; r < rows; ++r) {
      if (!allowed[m][r]) continue;
      for (int c = 0; c < cols; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * cols + c;
        if (arg[i] < 0 || xs[m].values()[i] > out[i]) {
          out[i] = xs[m].values()[i];
          arg[i] = static_cast<int>(m);
        }
      }
    }
  std::vector<const Tensor<T>*> inputs;
  for (const auto& x : xs) inputs.push_back(&x);
  return mtg::detail::make_result<T>("masked_row_max", xs.front().shape(), std::move(out), inputs, [arg](Node<T>& self) {
    for (std::size_t i = 0; i < arg.size(); ++i)
      if (arg[i] >= 0)
        if (T* g = mtg::detail::parent_grad(self, static_cast<std::size_t>(arg[i]))) g[i] += self.grad[i];
  });
}

}  // namespace detail

/// E_m = f_w(f_i - node_m); out_i = max_m f_eta([f_i | E_m,i]). With
/// `top_k` > 0 each pixel only considers its top_k nearest nodes.
template <typename T>
Tensor<T> enhance(const Tensor<T>& features, const Tensor<T>& nodes, const EnhanceParams<T>& p, int top_k = 0) {
  const int rows = features.dim(0), c = features.dim(1), k = nodes.dim(1);
  if (k == 0) throw ValidationError("enhance needs at least one support node");
  if (nodes.dim(0) != c) throw ShapeError("enhance: nodes " + nodes.shape().str() + " vs features " + features.shape().str());
  const Tensor<T> node_rows = ops::transpose(nodes);  // K x C
  std::vector<Tensor<T>> cand;
  cand.reserve(static_cast<std::size_t>(k));
  for (int m = 0; m < k; ++m) {
    const Tensor<T> diff = ops::sub(features, ops::expand(ops::select_row(node_rows, m), rows, c));
    const Tensor<T> e = ops::relu(p.f_w(diff));
    cand.push_back(ops::relu(p.f_eta(ops::concat_cols(features, e))));
  }
  if (top_k <= 0 || top_k >= k) return ops::max_elementwise(cand);

  std::vector<std::vector<char>> allowed(static_cast<std::size_t>(k), std::vector<char>(static_cast<std::size_t>(rows), 0));
  std::vector<int> order(static_cast<std::size_t>(k));
  std::vector<double> d(static_cast<std::size_t>(k));
  for (int r = 0; r < rows; ++r) {
    for (int m = 0; m < k; ++m) {
      double acc = 0;
      for (int j = 0; j < c; ++j) {
        const double diff = features.values()[static_cast<std::size_t>(r) * c + j] - node_rows.values()[static_cast<std::size_t>(m) * c + j];
        acc += diff * diff;
      }
      d[m] = acc;
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
    for (int j = 0; j < top_k; ++j) allowed[order[j]][r] = 1;
  }
  return detail::masked_row_max(cand, allowed);
}

template <typename T>
struct MrgrOutput {
  Tensor<T> region;  // F''_reg + F^_B (+ F^_S)
  HeadMaps<T> heads;
};

/// Boundary (and shape) reinforcement of the region features.
template <typename T>
class Mrgr {
 public:
  Mrgr() = default;
  Mrgr(int channels, const GraphConfig& cfg, bool with_shape, Rng& rng)
      : cfg_(cfg), with_shape_(with_shape), heads_(channels, with_shape, rng) {
    proj_b_ = ProjectionParams<T>(cfg.nodes, channels, rng);
    enh_b_ = EnhanceParams<T>(channels, rng);
    if (cfg.fuse_concat) fuse_b_ = nn::Conv2d<T>(2 * channels, channels, 1, 1, rng, true);
    if (with_shape) {
      proj_s_ = ProjectionParams<T>(cfg.nodes, channels, rng);
      enh_s_ = EnhanceParams<T>(channels, rng);
      if (cfg.fuse_concat) fuse_s_ = nn::Conv2d<T>(2 * channels, channels, 1, 1, rng, true);
    }
  }

  MrgrOutput<T> operator()(const Tensor<T>& f_reg, const Tensor<T>& f_bou, const Tensor<T>& f_shp) const {
    MrgrOutput<T> out;
    out.heads = heads_(f_bou, with_shape_ ? f_shp : Tensor<T>());
    std::vector<Tensor<T>> terms{f_reg, branch(f_reg, f_bou, out.heads.boundary, proj_b_, enh_b_, fuse_b_)};
    if (with_shape_) terms.push_back(branch(f_reg, f_shp, out.heads.shape, proj_s_, enh_s_, fuse_s_));
    Tensor<T> acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ops::add(acc, terms[i]);
    out.region = acc;
    return out;
  }

  void seed_centers(const Tensor<T>& f_reg, const Tensor<T>& f_bou, const Tensor<T>& f_shp, Rng& rng) {
    NoGradGuard g;
    const HeadMaps<T> h = heads_(f_bou, with_shape_ ? f_shp : Tensor<T>());
    seed(proj_b_, gate_features(h.boundary, fuse(f_reg, f_bou, fuse_b_)), rng);
    if (with_shape_) seed(proj_s_, gate_features(h.shape, fuse(f_reg, f_shp, fuse_s_)), rng);
  }

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) const {
    heads_.collect(ps, prefix + ".heads");
    proj_b_.collect(ps, prefix + ".project_boundary");
    enh_b_.collect(ps, prefix + ".enhance_boundary");
    if (fuse_b_.weight().defined()) fuse_b_.collect(ps, prefix + ".fuse_boundary");
    if (with_shape_) {
      proj_s_.collect(ps, prefix + ".project_shape");
      enh_s_.collect(ps, prefix + ".enhance_shape");
      if (fuse_s_.weight().defined()) fuse_s_.collect(ps, prefix + ".fuse_shape");
    }
  }

  TaskHeads<T>& heads() { return heads_; }

 private:
  static Tensor<T> fuse(const Tensor<T>& f_reg, const Tensor<T>& f_task, const nn::Conv2d<T>& conv) {
    if (!conv.weight().defined()) return ops::add(f_reg, f_task);
    return conv(ops::concat_channels(std::vector<Tensor<T>>{f_reg, f_task}));
  }

  Tensor<T> branch(const Tensor<T>& f_reg, const Tensor<T>& f_task, const Tensor<T>& map, const ProjectionParams<T>& proj,
                   const EnhanceParams<T>& enh, const nn::Conv2d<T>& conv) const {
    const Tensor<T> fused = fuse(f_reg, f_task, conv);
    const Tensor<T> gated = gate_features(map, fused);
    const int n = fused.dim(0), h = fused.dim(2), w = fused.dim(3);
    std::vector<Tensor<T>> rows;
    for (int s = 0; s < n; ++s) {
      const Tensor<T> nodes = build_support_nodes(ops::to_pixel_major(gated, s), proj);
      rows.push_back(enhance(ops::to_pixel_major(fused, s), nodes, enh, cfg_.support_top_k));
    }
    return ops::from_pixel_major(rows, h, w);
  }

  static void seed(ProjectionParams<T>& p, const Tensor<T>& f, Rng& rng) {
    std::vector<T> pool;
    int rows = 0;
    for (int s = 0; s < f.dim(0); ++s) {
      const Tensor<T> m = ops::to_pixel_major(f, s);
      pool.insert(pool.end(), m.values().begin(), m.values().end());
      rows += m.dim(0);
    }
    p.seed_from(pool, rows, rng);
  }

  GraphConfig cfg_;
  bool with_shape_ = true;
  TaskHeads<T> heads_;
  ProjectionParams<T> proj_b_, proj_s_;
  EnhanceParams<T> enh_b_, enh_s_;
  nn::Conv2d<T> fuse_b_, fuse_s_;
};

}  // namespace mtg
