#pragma once

#include <atomic>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "mtgnet/core/error.hpp"
#include "mtgnet/core/ops.hpp"
#include "mtgnet/nn/layers.hpp"

namespace mtg {

/// Result of projecting a pixel-major feature matrix onto K graph nodes.
template <typename T>
struct GraphBundle {
  Tensor<T> nodes;       // C x K, unit-norm (or zero) columns
  Tensor<T> assignment;  // (H*W) x K, row-stochastic
  Tensor<T> adjacency;   // K x K, nodes^T nodes
};

inline constexpr double kNodeNormEps = 1e-8;
/// Floor on the total assignment mass of a node before averaging residuals.
inline constexpr double kAssignmentMassFloor = 1e-12;

enum class Activation { kRelu, kIdentity };

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw ValidationError("unknown activation '" + s + "' (expected relu or identity)");
}

inline std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "identity"; }

template <typename T>
Tensor<T> apply_activation(const Tensor<T>& x, Activation a) {
  return a == Activation::kRelu ? ops::relu(x) : x;
}

template <typename T>
Tensor<T> adjacency(const Tensor<T>& nodes) {
  return ops::matmul(ops::transpose(nodes), nodes);
}

/// Soft-assigns every pixel feature f_i (rows of `features`, P x C) to K
/// centres t_k with per-channel scales sigma_k:
///   S_ik = softmax_k(-|(f_i - t_k) / sigma_k|^2 / 2)
///   g*_k = sum_i S_ik (f_i - t_k) / sigma_k / sum_i S_ik
///   g_k  = g*_k / max(|g*_k|, eps)
template <typename T>
GraphBundle<T> graph_project(const Tensor<T>& features, const Tensor<T>& centers, const Tensor<T>& sigma) {
  if (features.shape().rank() != 2 || centers.shape().rank() != 2)
    throw ShapeError("graph_project expects matrices, got " + features.shape().str() + " and " + centers.shape().str());
  const int p = features.dim(0), c = features.dim(1), k = centers.dim(0);
  if (k < 1) throw ValidationError("graph_project needs K >= 1");
  if (centers.dim(1) != c || sigma.shape() != centers.shape())
    throw ShapeError("graph_project: features " + features.shape().str() + ", centres " + centers.shape().str() +
                     ", scales " + sigma.shape().str());
  for (T v : sigma.values())
    if (!(v > T(0))) throw ValidationError("graph_project: scales must be strictly positive");
  static std::atomic<bool> warned{false};
  if (k > p && !warned.exchange(true))
    std::clog << "warning: graph_project with K=" << k << " nodes > " << p << " pixels\n";

  const Tensor<T> inv = ops::div(Tensor<T>::filled(sigma.shape(), T(1)), sigma);
  const Tensor<T> inv_sq = ops::square(inv);
  const Tensor<T> quad_f = ops::matmul(ops::square(features), ops::transpose(inv_sq));                 // P x K
  const Tensor<T> cross = ops::matmul(features, ops::transpose(ops::mul(centers, inv_sq)));            // P x K
  const Tensor<T> quad_t = ops::transpose(ops::sum_cols(ops::mul(ops::square(centers), inv_sq)));      // 1 x K
  const Tensor<T> dist = ops::add(ops::sub(quad_f, ops::scale(cross, T(2))), ops::expand(quad_t, p, k));
  const Tensor<T> s = ops::softmax_rows(ops::scale(dist, T(-0.5)));

  const Tensor<T> mass = ops::clamp(ops::transpose(ops::sum_rows(s)), static_cast<T>(kAssignmentMassFloor),
                                    std::numeric_limits<T>::max());                                       // K x 1
  const Tensor<T> mean_f = ops::div(ops::matmul(ops::transpose(s), features), ops::expand(mass, k, c));  // K x C
  const Tensor<T> residual = ops::mul(ops::sub(mean_f, centers), inv);                                    // K x C
  const Tensor<T> nodes = ops::normalize_columns(ops::transpose(residual), static_cast<T>(kNodeNormEps));
  return {nodes, s, adjacency(nodes)};
}

/// Bias-free two-layer perceptron applied to node rows.
template <typename T>
class NodeMlp {
 public:
  NodeMlp() = default;
  NodeMlp(int in, int hidden, int out, Rng& rng)
      : l1_(in, hidden, rng, /*bias=*/false), l2_(hidden, out, rng, /*bias=*/false) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return l2_(ops::relu(l1_(x))); }

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) const {
    l1_.collect(ps, prefix + ".fc1");
    l2_.collect(ps, prefix + ".fc2");
  }

  nn::Linear<T>& first() { return l1_; }
  nn::Linear<T>& second() { return l2_; }

 private:
  nn::Linear<T> l1_, l2_;
};

/// Key / value MLPs on the region graph, a query MLP on the task graph, and a
/// scalar transfer weight that starts at zero.
template <typename T>
struct InteractionParams {
  NodeMlp<T> key, value, query;
  Tensor<T> weight;

  InteractionParams() = default;
  InteractionParams(int channels, int hidden, Rng& rng)
      : key(channels, hidden, hidden, rng),
        value(channels, hidden, channels, rng),
        query(channels, hidden, hidden, rng),
        weight(Tensor<T>::parameter(Shape{1, 1}, {T(0)})) {}

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) const {
    key.collect(ps, prefix + ".key");
    value.collect(ps, prefix + ".value");
    query.collect(ps, prefix + ".query");
    ps.add(prefix + ".transfer", weight);
  }
};

/// G'_task = W (A V)^T + G_task with A = Q Key^T, in C x K layout.
template <typename T>
Tensor<T> graph_interact(const Tensor<T>& region_nodes, const Tensor<T>& task_nodes, const InteractionParams<T>& p) {
  if (region_nodes.shape() != task_nodes.shape())
    throw ShapeError("graph_interact: region graph " + region_nodes.shape().str() + " vs task graph " +
                     task_nodes.shape().str());
  const Tensor<T> reg_rows = ops::transpose(region_nodes);  // K x C
  const Tensor<T> task_rows = ops::transpose(task_nodes);
  const Tensor<T> attn = ops::matmul(p.query(task_rows), ops::transpose(p.key(reg_rows)));  // K x K
  const Tensor<T> message = ops::matmul(attn, p.value(reg_rows));                            // K x C
  const int k = message.dim(0), c = message.dim(1);
  return ops::add(ops::transpose(ops::mul(ops::expand(p.weight, k, c), message)), task_nodes);
}

/// Node-major graph convolution: G''^T = phi(A G'^T M).
template <typename T>
Tensor<T> graph_reason(const Tensor<T>& nodes, const Tensor<T>& adj, const Tensor<T>& m, Activation phi) {
  const int k = nodes.dim(1);
  if (adj.shape() != Shape{k, k}) throw ShapeError("graph_reason: adjacency " + adj.shape().str());
  return ops::transpose(apply_activation(ops::matmul(ops::matmul(adj, ops::transpose(nodes)), m), phi));
}

/// F'' = Q G''^T + F'.
template <typename T>
Tensor<T> graph_reproject(const Tensor<T>& assignment, const Tensor<T>& nodes, const Tensor<T>& features) {
  if (assignment.dim(0) != features.dim(0) || assignment.dim(1) != nodes.dim(1) || nodes.dim(0) != features.dim(1))
    throw ShapeError("graph_reproject: assignment " + assignment.shape().str() + ", nodes " + nodes.shape().str() +
                     ", features " + features.shape().str());
  return ops::add(ops::matmul(assignment, ops::transpose(nodes)), features);
}

/// Learnable centres T and log-scales s (sigma = exp(s)) of one projection.
template <typename T>
struct ProjectionParams {
  Tensor<T> centers;
  Tensor<T> log_scale;

  ProjectionParams() = default;
  ProjectionParams(int k, int channels, Rng& rng)
      : centers(Tensor<T>::parameter(Shape{k, channels}, nn::he_normal<T>(static_cast<std::size_t>(k) * channels, 2, rng))),
        log_scale(Tensor<T>::parameter(Shape{k, channels}, std::vector<T>(static_cast<std::size_t>(k) * channels, T(0)))) {}

  Tensor<T> sigma() const { return ops::exp(log_scale); }

  GraphBundle<T> project(const Tensor<T>& features) const { return graph_project(features, centers, sigma()); }

  /// Seeds the centres with K distinct pixel features drawn from `pool`
  /// (rows are pixels).
  void seed_from(const std::vector<T>& pool, int rows, Rng& rng) {
    const int k = centers.dim(0), c = centers.dim(1);
    if (rows <= 0) return;
    std::vector<int> idx(static_cast<std::size_t>(rows));
    for (int i = 0; i < rows; ++i) idx[i] = i;
    rng.shuffle(idx.begin(), idx.end());
    auto& v = centers.values();
    for (int j = 0; j < k; ++j)
      std::copy_n(pool.data() + static_cast<std::size_t>(idx[j % rows]) * c, c, v.data() + static_cast<std::size_t>(j) * c);
  }

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) const {
    ps.add(prefix + ".centers", centers);
    ps.add(prefix + ".log_scale", log_scale);
  }
};

struct GraphConfig {
  int nodes = 12;
  /// Hidden width of the interaction MLPs; 0 means the channel width.
  int hidden = 0;
  Activation activation = Activation::kRelu;
  /// Top-k support nodes per pixel in the reinforcement step; 0 connects all.
  int support_top_k = 0;
  /// Fuse region and task features by addition (default) or concatenation + 1x1 conv.
  bool fuse_concat = false;

  void validate() const {
    if (nodes < 1) throw ValidationError("graph nodes K must be >= 1");
    if (hidden < 0) throw ValidationError("graph hidden width must be >= 0");
    if (support_top_k < 0) throw ValidationError("support_top_k must be >= 0");
  }
};

/// Per-sample MIGR outputs in pixel-major layout.
template <typename T>
struct MigrOutput {
  Tensor<T> region, boundary, shape;  // (N, C, h, w); shape undefined when that task is off
  std::vector<GraphBundle<T>> region_graphs, boundary_graphs, shape_graphs;
};

/// Projection, cross-graph interaction, graph reasoning and reprojection for
/// the region graph and the enabled auxiliary graphs.
template <typename T>
class Migr {
 public:
  Migr() = default;
  Migr(int channels, const GraphConfig& cfg, bool with_shape, Rng& rng) : cfg_(cfg), with_shape_(with_shape) {
    cfg.validate();
    const int hidden = cfg.hidden > 0 ? cfg.hidden : channels;
    proj_reg_ = ProjectionParams<T>(cfg.nodes, channels, rng);
    proj_bou_ = ProjectionParams<T>(cfg.nodes, channels, rng);
    inter_bou_ = InteractionParams<T>(channels, hidden, rng);
    m_bou_ = gcn_weight(channels, rng);
    if (with_shape_) {
      proj_shp_ = ProjectionParams<T>(cfg.nodes, channels, rng);
      inter_shp_ = InteractionParams<T>(channels, hidden, rng);
      m_shp_ = gcn_weight(channels, rng);
    }
  }

  MigrOutput<T> operator()(const Tensor<T>& f_reg, const Tensor<T>& f_bou, const Tensor<T>& f_shp) const {
    const int n = f_reg.dim(0), h = f_reg.dim(2), w = f_reg.dim(3);
    MigrOutput<T> out;
    std::vector<Tensor<T>> reg_rows, bou_rows, shp_rows;
    for (int s = 0; s < n; ++s) {
      const Tensor<T> fr = ops::to_pixel_major(f_reg, s);
      const Tensor<T> fb = ops::to_pixel_major(f_bou, s);
      GraphBundle<T> gr = proj_reg_.project(fr);
      GraphBundle<T> gb = proj_bou_.project(fb);
      reg_rows.push_back(graph_reproject(gr.assignment, gr.nodes, fr));
      const Tensor<T> gb2 = graph_reason(graph_interact(gr.nodes, gb.nodes, inter_bou_), gb.adjacency, m_bou_, cfg_.activation);
      bou_rows.push_back(graph_reproject(gb.assignment, gb2, fb));
      out.boundary_graphs.push_back(gb);
      if (with_shape_) {
        const Tensor<T> fs = ops::to_pixel_major(f_shp, s);
        GraphBundle<T> gs = proj_shp_.project(fs);
        const Tensor<T> gs2 =
            graph_reason(graph_interact(gr.nodes, gs.nodes, inter_shp_), gs.adjacency, m_shp_, cfg_.activation);
        shp_rows.push_back(graph_reproject(gs.assignment, gs2, fs));
        out.shape_graphs.push_back(gs);
      }
      out.region_graphs.push_back(gr);
    }
    out.region = ops::from_pixel_major(reg_rows, h, w);
    out.boundary = ops::from_pixel_major(bou_rows, h, w);
    if (with_shape_) out.shape = ops::from_pixel_major(shp_rows, h, w);
    return out;
  }

  /// Seeds every projection's centres from pixel features of a batch.
  void seed_centers(const Tensor<T>& f_reg, const Tensor<T>& f_bou, const Tensor<T>& f_shp, Rng& rng) {
    seed(proj_reg_, f_reg, rng);
    seed(proj_bou_, f_bou, rng);
    if (with_shape_) seed(proj_shp_, f_shp, rng);
  }

  void collect(nn::ParameterSet<T>& ps, const std::string& prefix) const {
    proj_reg_.collect(ps, prefix + ".project_region");
    proj_bou_.collect(ps, prefix + ".project_boundary");
    inter_bou_.collect(ps, prefix + ".interact_boundary");
    ps.add(prefix + ".reason_boundary", m_bou_);
    if (with_shape_) {
      proj_shp_.collect(ps, prefix + ".project_shape");
      inter_shp_.collect(ps, prefix + ".interact_shape");
      ps.add(prefix + ".reason_shape", m_shp_);
    }
  }

  ProjectionParams<T>& projection_region() { return proj_reg_; }
  ProjectionParams<T>& projection_boundary() { return proj_bou_; }
  ProjectionParams<T>& projection_shape() { return proj_shp_; }
  InteractionParams<T>& interaction_boundary() { return inter_bou_; }
  InteractionParams<T>& interaction_shape() { return inter_shp_; }
  Tensor<T>& reason_boundary() { return m_bou_; }
  Tensor<T>& reason_shape() { return m_shp_; }
  bool with_shape() const { return with_shape_; }

 private:
  static Tensor<T> gcn_weight(int c, Rng& rng) {
    auto v = nn::he_normal<T>(static_cast<std::size_t>(c) * c, c, rng);
    for (auto& x : v) x *= T(0.1);
    return Tensor<T>::parameter(Shape{c, c}, std::move(v));
  }

  static void seed(ProjectionParams<T>& p, const Tensor<T>& f, Rng& rng) {
    std::vector<T> pool;
    int rows = 0;
    for (int s = 0; s < f.dim(0); ++s) {
      NoGradGuard g;
      const Tensor<T> m = ops::to_pixel_major(f, s);
      pool.insert(pool.end(), m.values().begin(), m.values().end());
      rows += m.dim(0);
    }
    p.seed_from(pool, rows, rng);
  }

  GraphConfig cfg_;
  bool with_shape_ = true;
  ProjectionParams<T> proj_reg_, proj_bou_, proj_shp_;
  InteractionParams<T> inter_bou_, inter_shp_;
  Tensor<T> m_bou_, m_shp_;
};

}  // namespace mtg
