#pragma once

// Plain nested-loop float64 reference implementations, written without the
// tensor library so they can check it independently.

#include <algorithm>
#include <cmath>
#include <vector>

namespace mtg::oracle {

struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}
  Mat(int r, int c, std::vector<double> v) : rows(r), cols(c), a(std::move(v)) {}

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
};

inline Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

inline Mat matmul(const Mat& x, const Mat& y) {
  Mat z(x.rows, y.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < y.cols; ++j) {
      double s = 0;
      for (int k = 0; k < x.cols; ++k) s += x(i, k) * y(k, j);
      z(i, j) = s;
    }
  return z;
}

inline double relu(double v) { return v > 0 ? v : 0.0; }

struct Projection {
  Mat nodes;       // C x K
  Mat assignment;  // P x K
};

/// Soft assignment and normalised residual nodes. f: P x C, t and sigma: K x C.
inline Projection project(const Mat& f, const Mat& t, const Mat& sigma, double eps = 1e-8, double mass_floor = 1e-12) {
  const int p = f.rows, c = f.cols, k = t.rows;
  Projection out{Mat(c, k), Mat(p, k)};
  for (int i = 0; i < p; ++i) {
    std::vector<double> logit(static_cast<std::size_t>(k));
    for (int m = 0; m < k; ++m) {
      double d = 0;
      for (int j = 0; j < c; ++j) {
        const double r = (f(i, j) - t(m, j)) / sigma(m, j);
        d += r * r;
      }
      logit[m] = -0.5 * d;
    }
    const double mx = *std::max_element(logit.begin(), logit.end());
    double z = 0;
    for (int m = 0; m < k; ++m) z += std::exp(logit[m] - mx);
    for (int m = 0; m < k; ++m) out.assignment(i, m) = std::exp(logit[m] - mx) / z;
  }
  for (int m = 0; m < k; ++m) {
    double mass = 0;
    for (int i = 0; i < p; ++i) mass += out.assignment(i, m);
    mass = std::max(mass, mass_floor);
    std::vector<double> g(static_cast<std::size_t>(c), 0.0);
    for (int j = 0; j < c; ++j) {
      double s = 0;
      for (int i = 0; i < p; ++i) s += out.assignment(i, m) * f(i, j);
      g[j] = (s / mass - t(m, j)) / sigma(m, j);
    }
    double norm = 0;
    for (double v : g) norm += v * v;
    norm = std::max(std::sqrt(norm), eps);
    for (int j = 0; j < c; ++j) out.nodes(j, m) = g[j] / norm;
  }
  return out;
}

inline Mat gram(const Mat& nodes) {
  Mat a(nodes.cols, nodes.cols);
  for (int x = 0; x < nodes.cols; ++x)
    for (int y = 0; y < nodes.cols; ++y) {
      double s = 0;
      for (int j = 0; j < nodes.rows; ++j) s += nodes(j, x) * nodes(j, y);
      a(x, y) = s;
    }
  return a;
}

/// Bias-free two-layer MLP on the rows of x.
inline Mat mlp(const Mat& x, const Mat& w1, const Mat& w2) {
  Mat h(x.rows, w1.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < w1.cols; ++j) {
      double s = 0;
      for (int k = 0; k < x.cols; ++k) s += x(i, k) * w1(k, j);
      h(i, j) = relu(s);
    }
  Mat y(x.rows, w2.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int j = 0; j < w2.cols; ++j) {
      double s = 0;
      for (int k = 0; k < h.cols; ++k) s += h(i, k) * w2(k, j);
      y(i, j) = s;
    }
  return y;
}

struct InteractionWeights {
  Mat key1, key2, value1, value2, query1, query2;
  double transfer = 0;
};

/// Task graph updated by attention over the region graph (C x K layout).
inline Mat interact(const Mat& region_nodes, const Mat& task_nodes, const InteractionWeights& w) {
  const Mat reg = transpose(region_nodes), task = transpose(task_nodes);
  const Mat key = mlp(reg, w.key1, w.key2), val = mlp(reg, w.value1, w.value2), qry = mlp(task, w.query1, w.query2);
  const int k = reg.rows, c = reg.cols;
  Mat out = task_nodes;
  for (int a = 0; a < k; ++a) {
    for (int j = 0; j < c; ++j) {
      double msg = 0;
      for (int b = 0; b < k; ++b) {
        double attn = 0;
        for (int d = 0; d < qry.cols; ++d) attn += qry(a, d) * key(b, d);
        msg += attn * val(b, j);
      }
      out(j, a) += w.transfer * msg;
    }
  }
  return out;
}

/// (phi(A G^T M))^T with phi = ReLU or identity.
inline Mat reason(const Mat& nodes, const Mat& adj, const Mat& m, bool use_relu) {
  const int c = nodes.rows, k = nodes.cols;
  Mat out(c, k);
  for (int a = 0; a < k; ++a)
    for (int j = 0; j < c; ++j) {
      double s = 0;
      for (int b = 0; b < k; ++b)
        for (int q = 0; q < c; ++q) s += adj(a, b) * nodes(q, b) * m(q, j);
      out(j, a) = use_relu ? relu(s) : s;
    }
  return out;
}

/// Q G^T + F.
inline Mat reproject(const Mat& q, const Mat& nodes, const Mat& f) {
  Mat out = f;
  for (int i = 0; i < f.rows; ++i)
    for (int j = 0; j < f.cols; ++j)
      for (int m = 0; m < q.cols; ++m) out(i, j) += q(i, m) * nodes(j, m);
  return out;
}

struct EnhanceWeights {
  Mat fw_w, fw_b;    // C x C, 1 x C
  Mat eta_w, eta_b;  // 2C x C, 1 x C
};

/// max over m of relu(eta [f | relu(fw (f - node_m))]).
inline Mat enhance(const Mat& f, const Mat& nodes, const EnhanceWeights& w) {
  const int p = f.rows, c = f.cols, k = nodes.cols;
  Mat out(p, c);
  for (int i = 0; i < p; ++i) {
    std::vector<double> best(static_cast<std::size_t>(c), -1.0);
    for (int m = 0; m < k; ++m) {
      std::vector<double> e(static_cast<std::size_t>(c));
      for (int j = 0; j < c; ++j) {
        double s = w.fw_b(0, j);
        for (int q = 0; q < c; ++q) s += (f(i, q) - nodes(q, m)) * w.fw_w(q, j);
        e[j] = relu(s);
      }
      for (int j = 0; j < c; ++j) {
        double s = w.eta_b(0, j);
        for (int q = 0; q < c; ++q) s += f(i, q) * w.eta_w(q, j) + e[q] * w.eta_w(c + q, j);
        const double h = relu(s);
        if (m == 0 || h > best[j]) best[j] = h;
      }
    }
    for (int j = 0; j < c; ++j) out(i, j) = best[j];
  }
  return out;
}

/// Population mean and variance over samples (two passes).
inline void mean_variance(const std::vector<std::vector<double>>& samples, std::vector<double>& mean,
                          std::vector<double>& var) {
  const std::size_t n = samples.front().size();
  mean.assign(n, 0.0);
  var.assign(n, 0.0);
  for (const auto& s : samples)
    for (std::size_t i = 0; i < n; ++i) mean[i] += s[i];
  for (auto& m : mean) m /= static_cast<double>(samples.size());
  for (const auto& s : samples)
    for (std::size_t i = 0; i < n; ++i) var[i] += (s[i] - mean[i]) * (s[i] - mean[i]);
  for (auto& v : var) v /= static_cast<double>(samples.size());
}

inline double bce(double p, double g, double delta = 1e-7) {
  p = std::clamp(p, delta, 1.0 - delta);
  return -(g * std::log(p) + (1 - g) * std::log(1 - p));
}

/// Uncertainty-weighted BCE for a single image.
inline double uce(const std::vector<double>& p, const std::vector<double>& g, const std::vector<double>& v) {
  double lo = v[0], hi = v[0];
  for (double x : v) lo = std::min(lo, x), hi = std::max(hi, x);
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double norm = hi > lo ? (v[i] - lo) / (hi - lo) : 0.0;
    s += (1 + norm) * bce(p[i], g[i]);
  }
  return s / static_cast<double>(p.size());
}

inline double soft_dice_loss(const std::vector<double>& p, const std::vector<double>& g, double eps = 1e-6) {
  double inter = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * g[i];
    sp += p[i];
    sg += g[i];
  }
  return 1 - (2 * inter + eps) / (sp + sg + eps);
}

}  // namespace mtg::oracle
