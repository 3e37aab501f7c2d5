#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mtgnet/core/rng.hpp"
#include "mtgnet/core/tensor.hpp"

// Differentiable primitives. Every op reads its inputs' values, produces a
// fresh result, and (when any input requires grad) records a closure that
// pushes the result gradient back into the inputs.

namespace mtg::ops {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

namespace detail {

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

inline void require_rank(const Shape& s, int rank, const char* op) {
  if (s.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + s.str());
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const char* op, const Tensor<T>& a, Fwd fwd, Deriv deriv) {
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return mtg::detail::make_result<T>(op, a.shape(), std::move(out), {&a}, [deriv](Node<T>& self) {
    T* ga = mtg::detail::parent_grad(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * deriv(x[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return mtg::detail::make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (T* g = mtg::detail::parent_grad(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return mtg::detail::make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (T* g = mtg::detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return mtg::detail::make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (T* g = mtg::detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same(a.shape(), b.shape(), "div");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] / b.values()[i];
  return mtg::detail::make_result<T>("div", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    const auto& bv = self.parents[1]->value;
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / bv[i];
    if (T* g = mtg::detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i] * self.value[i] / bv[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary<T>("scale", a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

/// |x| with subgradient 0 at the kink.
template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

/// Clamp with zero gradient outside [lo, hi].
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary<T>(
      "clamp", a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  return mtg::detail::make_result<T>("sum", Shape{1}, {s}, {&a}, [](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0)) {
      const T go = self.grad[0];
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += go;
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw ValidationError("mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Per-sample sum over all but the leading dimension: (N, ...) -> (N).
template <typename T>
Tensor<T> sum_per_sample(const Tensor<T>& a) {
  const int n = a.dim(0);
  const std::size_t inner = a.numel() / static_cast<std::size_t>(n);
  std::vector<T> out(static_cast<std::size_t>(n), T(0));
  for (int s = 0; s < n; ++s)
    for (std::size_t i = 0; i < inner; ++i) out[static_cast<std::size_t>(s)] += a.values()[s * inner + i];
  return mtg::detail::make_result<T>("sum_per_sample", Shape{n}, std::move(out), {&a}, [n, inner](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (int s = 0; s < n; ++s)
        for (std::size_t i = 0; i < inner; ++i) g[s * inner + i] += self.grad[static_cast<std::size_t>(s)];
  });
}

/// Column sums of a matrix: (m, n) -> (1, n).
template <typename T>
Tensor<T> sum_rows(const Tensor<T>& a) {
  detail::require_rank(a.shape(), 2, "sum_rows");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<T> out(static_cast<std::size_t>(n), T(0));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[j] += a.values()[i * n + j];
  return mtg::detail::make_result<T>("sum_rows", Shape{1, n}, std::move(out), {&a}, [m, n](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[i * n + j] += self.grad[j];
  });
}

/// Row sums of a matrix: (m, n) -> (m, 1).
template <typename T>
Tensor<T> sum_cols(const Tensor<T>& a) {
  detail::require_rank(a.shape(), 2, "sum_cols");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m), T(0));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[i] += a.values()[i * n + j];
  return mtg::detail::make_result<T>("sum_cols", Shape{m, 1}, std::move(out), {&a}, [m, n](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[i * n + j] += self.grad[i];
  });
}

// ------------------------------------------------------------------ matrices

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
  if (shape.numel() != a.numel()) throw ShapeError("reshape " + a.shape().str() + " -> " + shape.str());
  return mtg::detail::make_result<T>("reshape", shape, a.values(), {&a}, [](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

/// (1, n) -> (m, n) or (m, 1) -> (m, n).
template <typename T>
Tensor<T> expand(const Tensor<T>& a, int rows, int cols) {
  detail::require_rank(a.shape(), 2, "expand");
  const int ar = a.dim(0), ac = a.dim(1);
  if (!((ar == 1 || ar == rows) && (ac == 1 || ac == cols)))
    throw ShapeError("expand " + a.shape().str() + " -> (" + std::to_string(rows) + "," + std::to_string(cols) + ")");
  std::vector<T> out(static_cast<std::size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out[i * cols + j] = a.values()[(ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j)];
  return mtg::detail::make_result<T>("expand", Shape{rows, cols}, std::move(out), {&a},
                                     [rows, cols, ar, ac](Node<T>& self) {
                                       if (T* g = mtg::detail::parent_grad(self, 0))
                                         for (int i = 0; i < rows; ++i)
                                           for (int j = 0; j < cols; ++j)
                                             g[(ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j)] += self.grad[i * cols + j];
                                     });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: inner dimensions " + a.shape().str() + " x " + b.shape().str());
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  MapR<T>(out.data(), m, n).noalias() = CMapR<T>(a.values().data(), m, k) * CMapR<T>(b.values().data(), k, n);
  return mtg::detail::make_result<T>("matmul", Shape{m, n}, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    CMapR<T> go(self.grad.data(), m, n);
    if (T* g = mtg::detail::parent_grad(self, 0))
      MapR<T>(g, m, k).noalias() += go * CMapR<T>(self.parents[1]->value.data(), k, n).transpose();
    if (T* g = mtg::detail::parent_grad(self, 1))
      MapR<T>(g, k, n).noalias() += CMapR<T>(self.parents[0]->value.data(), m, k).transpose() * go;
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_rank(a.shape(), 2, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<T> out(a.numel());
  MapR<T>(out.data(), n, m) = CMapR<T>(a.values().data(), m, n).transpose();
  return mtg::detail::make_result<T>("transpose", Shape{n, m}, std::move(out), {&a}, [m, n](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      MapR<T>(g, m, n) += CMapR<T>(self.grad.data(), n, m).transpose();
  });
}

/// Numerically stable softmax along each row.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  detail::require_rank(a.shape(), 2, "softmax_rows");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<T> out(a.numel());
  for (int i = 0; i < m; ++i) {
    const T* row = a.values().data() + static_cast<std::ptrdiff_t>(i) * n;
    T mx = *std::max_element(row, row + n);
    T z = 0;
    for (int j = 0; j < n; ++j) z += (out[i * n + j] = std::exp(row[j] - mx));
    for (int j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return mtg::detail::make_result<T>("softmax_rows", a.shape(), std::move(out), {&a}, [m, n](Node<T>& self) {
    T* g = mtg::detail::parent_grad(self, 0);
    if (!g) return;
    for (int i = 0; i < m; ++i) {
      T dot = 0;
      for (int j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.value[i * n + j];
      for (int j = 0; j < n; ++j) g[i * n + j] += self.value[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

/// Scales each column to unit L2 norm, dividing by max(norm, eps) so a zero
/// column stays zero.
template <typename T>
Tensor<T> normalize_columns(const Tensor<T>& a, T eps) {
  detail::require_rank(a.shape(), 2, "normalize_columns");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<T> norms(static_cast<std::size_t>(n), T(0));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) norms[j] += a.values()[i * n + j] * a.values()[i * n + j];
  for (auto& v : norms) v = std::sqrt(v);
  std::vector<T> out(a.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[i * n + j] = a.values()[i * n + j] / std::max(norms[j], eps);
  return mtg::detail::make_result<T>(
      "normalize_columns", a.shape(), std::move(out), {&a}, [m, n, eps, norms](Node<T>& self) {
        T* g = mtg::detail::parent_grad(self, 0);
        if (!g) return;
        for (int j = 0; j < n; ++j) {
          if (norms[j] > eps) {
            // d(x/|x|) = (I - y y^T) / |x|
            T dot = 0;
            for (int i = 0; i < m; ++i) dot += self.grad[i * n + j] * self.value[i * n + j];
            for (int i = 0; i < m; ++i) g[i * n + j] += (self.grad[i * n + j] - self.value[i * n + j] * dot) / norms[j];
          } else {
            for (int i = 0; i < m; ++i) g[i * n + j] += self.grad[i * n + j] / eps;
          }
        }
      });
}

/// Horizontal concatenation of matrices with equal row counts.
template <typename T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank(a.shape(), 2, "concat_cols");
  detail::require_rank(b.shape(), 2, "concat_cols");
  const int m = a.dim(0), na = a.dim(1), nb = b.dim(1);
  if (b.dim(0) != m) throw ShapeError("concat_cols: row mismatch " + a.shape().str() + " vs " + b.shape().str());
  const int n = na + nb;
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    std::copy_n(a.values().data() + i * na, na, out.data() + i * n);
    std::copy_n(b.values().data() + i * nb, nb, out.data() + i * n + na);
  }
  return mtg::detail::make_result<T>("concat_cols", Shape{m, n}, std::move(out), {&a, &b}, [m, na, nb, n](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < na; ++j) g[i * na + j] += self.grad[i * n + j];
    if (T* g = mtg::detail::parent_grad(self, 1))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < nb; ++j) g[i * nb + j] += self.grad[i * n + na + j];
  });
}

/// Row `r` of a matrix as a (1, n) matrix.
template <typename T>
Tensor<T> select_row(const Tensor<T>& a, int r) {
  detail::require_rank(a.shape(), 2, "select_row");
  const int n = a.dim(1);
  if (r < 0 || r >= a.dim(0)) throw ShapeError("select_row index out of range");
  std::vector<T> out(a.values().begin() + static_cast<std::ptrdiff_t>(r) * n,
                     a.values().begin() + static_cast<std::ptrdiff_t>(r + 1) * n);
  return mtg::detail::make_result<T>("select_row", Shape{1, n}, std::move(out), {&a}, [r, n](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (int j = 0; j < n; ++j) g[r * n + j] += self.grad[j];
  });
}

/// Elementwise maximum over equally shaped tensors. Ties go to the lowest
/// index so the gradient route is deterministic.
template <typename T>
Tensor<T> max_elementwise(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ValidationError("max_elementwise of an empty list");
  const Shape& s = xs.front().shape();
  for (const auto& x : xs) detail::require_same(s, x.shape(), "max_elementwise");
  const std::size_t n = s.numel();
  std::vector<T> out(xs.front().values());
  std::vector<int> arg(n, 0);
  for (std::size_t m = 1; m < xs.size(); ++m)
    for (std::size_t i = 0; i < n; ++i)
      if (xs[m].values()[i] > out[i]) {
        out[i] = xs[m].values()[i];
        arg[i] = static_cast<int>(m);
      }
  std::vector<const Tensor<T>*> inputs;
  for (const auto& x : xs) inputs.push_back(&x);
  return mtg::detail::make_result<T>("max_elementwise", s, std::move(out), inputs, [arg](Node<T>& self) {
    for (std::size_t i = 0; i < arg.size(); ++i)
      if (T* g = mtg::detail::parent_grad(self, static_cast<std::size_t>(arg[i]))) g[i] += self.grad[i];
  });
}

// -------------------------------------------------------------- feature maps

/// Multiplies every channel of x (N,C,H,W) by a single-channel map (N,1,H,W).
template <typename T>
Tensor<T> mul_channel_map(const Tensor<T>& x, const Tensor<T>& map) {
  detail::require_rank(x.shape(), 4, "mul_channel_map");
  detail::require_rank(map.shape(), 4, "mul_channel_map");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (map.dim(0) != n || map.dim(1) != 1 || map.dim(2) != x.dim(2) || map.dim(3) != x.dim(3))
    throw ShapeError("mul_channel_map: map " + map.shape().str() + " not broadcastable to " + x.shape().str());
  std::vector<T> out(x.numel());
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p)
        out[(s * c + ch) * hw + p] = x.values()[(s * c + ch) * hw + p] * map.values()[s * hw + p];
  return mtg::detail::make_result<T>("mul_channel_map", x.shape(), std::move(out), {&x, &map}, [n, c, hw](Node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const auto& mv = self.parents[1]->value;
    T* gx = mtg::detail::parent_grad(self, 0);
    T* gm = mtg::detail::parent_grad(self, 1);
    for (int s = 0; s < n; ++s)
      for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p) {
          const std::size_t i = static_cast<std::size_t>((s * c + ch) * hw + p);
          if (gx) gx[i] += self.grad[i] * mv[s * hw + p];
          if (gm) gm[s * hw + p] += self.grad[i] * xv[i];
        }
  });
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ValidationError("concat_channels of an empty list");
  const int n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int c_total = 0;
  for (const auto& x : xs) {
    detail::require_rank(x.shape(), 4, "concat_channels");
    if (x.dim(0) != n) throw ShapeError("concat_channels: batch dimension mismatch");
    if (x.dim(2) != h || x.dim(3) != w) throw ShapeError("concat_channels: spatial mismatch " + x.shape().str());
    c_total += x.dim(1);
  }
  const int hw = h * w;
  std::vector<T> out(static_cast<std::size_t>(n) * c_total * hw);
  std::vector<int> offsets;
  for (int s = 0; s < n; ++s) {
    int off = 0;
    for (const auto& x : xs) {
      const int c = x.dim(1);
      std::copy_n(x.values().data() + static_cast<std::ptrdiff_t>(s) * c * hw, c * hw,
                  out.data() + (static_cast<std::ptrdiff_t>(s) * c_total + off) * hw);
      off += c;
    }
  }
  std::vector<int> widths;
  for (const auto& x : xs) widths.push_back(x.dim(1));
  std::vector<const Tensor<T>*> inputs;
  for (const auto& x : xs) inputs.push_back(&x);
  return mtg::detail::make_result<T>("concat_channels", Shape{n, c_total, h, w}, std::move(out), inputs,
                                     [n, hw, c_total, widths](Node<T>& self) {
                                       int off = 0;
                                       for (std::size_t k = 0; k < widths.size(); ++k) {
                                         const int c = widths[k];
                                         if (T* g = mtg::detail::parent_grad(self, k))
                                           for (int s = 0; s < n; ++s) {
                                             const T* src = self.grad.data() + (static_cast<std::ptrdiff_t>(s) * c_total + off) * hw;
                                             T* dst = g + static_cast<std::ptrdiff_t>(s) * c * hw;
                                             for (int i = 0; i < c * hw; ++i) dst[i] += src[i];
                                           }
                                         off += c;
                                       }
                                     });
}

/// Batch concatenation of (n_i, C, H, W) maps.
template <typename T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ValidationError("concat_batch of an empty list");
  const Shape& s0 = xs[0].shape();
  int n_total = 0;
  for (const auto& x : xs) {
    if (x.shape().rank() != s0.rank()) throw ShapeError("concat_batch: rank mismatch");
    for (int d = 1; d < s0.rank(); ++d)
      if (x.dim(d) != s0[d]) throw ShapeError("concat_batch: " + x.shape().str() + " vs " + s0.str());
    n_total += x.dim(0);
  }
  std::vector<int> dims = s0.dims();
  dims[0] = n_total;
  std::vector<T> out;
  out.reserve(Shape(dims).numel());
  std::vector<std::size_t> sizes;
  for (const auto& x : xs) {
    out.insert(out.end(), x.values().begin(), x.values().end());
    sizes.push_back(x.numel());
  }
  std::vector<const Tensor<T>*> inputs;
  for (const auto& x : xs) inputs.push_back(&x);
  return mtg::detail::make_result<T>("concat_batch", Shape(dims), std::move(out), inputs, [sizes](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      if (T* g = mtg::detail::parent_grad(self, k))
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
      off += sizes[k];
    }
  });
}

/// Sample `index` of a batch, keeping a leading dimension of 1.
template <typename T>
Tensor<T> select_sample(const Tensor<T>& x, int index) {
  const int n = x.dim(0);
  if (index < 0 || index >= n) throw ShapeError("select_sample index out of range");
  const std::size_t inner = x.numel() / static_cast<std::size_t>(n);
  std::vector<int> dims = x.shape().dims();
  dims[0] = 1;
  std::vector<T> out(x.values().begin() + static_cast<std::ptrdiff_t>(index * inner),
                     x.values().begin() + static_cast<std::ptrdiff_t>((index + 1) * inner));
  return mtg::detail::make_result<T>("select_sample", Shape(dims), std::move(out), {&x}, [index, inner](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < inner; ++i) g[index * inner + i] += self.grad[i];
  });
}

/// Sample `index` of (N,C,H,W) as a pixel-major (H*W, C) matrix.
template <typename T>
Tensor<T> to_pixel_major(const Tensor<T>& x, int index) {
  detail::require_rank(x.shape(), 4, "to_pixel_major");
  const int c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (index < 0 || index >= x.dim(0)) throw ShapeError("to_pixel_major index out of range");
  const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(index) * c * hw;
  std::vector<T> out(static_cast<std::size_t>(hw) * c);
  MapR<T>(out.data(), hw, c) = CMapR<T>(x.values().data() + base, c, hw).transpose();
  return mtg::detail::make_result<T>("to_pixel_major", Shape{hw, c}, std::move(out), {&x}, [base, c, hw](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      MapR<T>(g + base, c, hw) += CMapR<T>(self.grad.data(), hw, c).transpose();
  });
}

/// Inverse of to_pixel_major for a batch: list of (H*W, C) -> (N, C, H, W).
template <typename T>
Tensor<T> from_pixel_major(const std::vector<Tensor<T>>& rows, int h, int w) {
  if (rows.empty()) throw ValidationError("from_pixel_major of an empty list");
  const int hw = h * w, c = rows[0].dim(1), n = static_cast<int>(rows.size());
  for (const auto& r : rows)
    if (r.shape() != Shape{hw, c}) throw ShapeError("from_pixel_major: got " + r.shape().str());
  std::vector<T> out(static_cast<std::size_t>(n) * c * hw);
  for (int s = 0; s < n; ++s)
    MapR<T>(out.data() + static_cast<std::ptrdiff_t>(s) * c * hw, c, hw) =
        CMapR<T>(rows[s].values().data(), hw, c).transpose();
  std::vector<const Tensor<T>*> inputs;
  for (const auto& r : rows) inputs.push_back(&r);
  return mtg::detail::make_result<T>("from_pixel_major", Shape{n, c, h, w}, std::move(out), inputs,
                                     [n, c, hw](Node<T>& self) {
                                       for (int s = 0; s < n; ++s)
                                         if (T* g = mtg::detail::parent_grad(self, static_cast<std::size_t>(s)))
                                           MapR<T>(g, hw, c) +=
                                               CMapR<T>(self.grad.data() + static_cast<std::ptrdiff_t>(s) * c * hw, c, hw).transpose();
                                     });
}

namespace detail {

// Column buffer layout: rows are (ci, ky, kx), columns are output pixels.
template <typename T>
void im2col(const T* x, int c_in, int h, int w, int k, int dil, T* col) {
  const int pad = dil * (k - 1) / 2;
  const int hw = h * w;
  for (int ci = 0; ci < c_in; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + static_cast<std::ptrdiff_t>((ci * k + ky) * k + kx) * hw;
        const int oy = ky * dil - pad, ox = kx * dil - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + oy;
          T* row = dst + y * w;
          if (sy < 0 || sy >= h) {
            std::fill_n(row, w, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::ptrdiff_t>(ci) * h + sy) * w;
          const int x0 = std::min(w, std::max(0, -ox));
          const int x1 = std::max(x0, std::min(w, w - ox));
          for (int xx = 0; xx < x0; ++xx) row[xx] = T(0);
          for (int xx = x0; xx < x1; ++xx) row[xx] = src[xx + ox];
          for (int xx = x1; xx < w; ++xx) row[xx] = T(0);
        }
      }
}

template <typename T>
void col2im(const T* col, int c_in, int h, int w, int k, int dil, T* gx) {
  const int pad = dil * (k - 1) / 2;
  const int hw = h * w;
  for (int ci = 0; ci < c_in; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + static_cast<std::ptrdiff_t>((ci * k + ky) * k + kx) * hw;
        const int oy = ky * dil - pad, ox = kx * dil - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + oy;
          if (sy < 0 || sy >= h) continue;
          T* dst = gx + (static_cast<std::ptrdiff_t>(ci) * h + sy) * w;
          const T* row = src + y * w;
          const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
          for (int xx = x0; xx < x1; ++xx) dst[xx + ox] += row[xx];
        }
      }
}

}  // namespace detail

/// Largest im2col buffer (elements, whole batch) a convolution keeps for backward.
inline constexpr std::size_t kConvColumnCacheLimit = std::size_t{1} << 23;

/// Stride-1 "same" convolution with optional dilation.
/// x: (N, Cin, H, W), weight: (Cout, Cin, k, k), bias: (Cout) or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int dilation = 1) {
  detail::require_rank(x.shape(), 4, "conv2d");
  detail::require_rank(weight.shape(), 4, "conv2d");
  const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int c_out = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c_in) throw ShapeError("conv2d: weight " + weight.shape().str() + " vs input " + x.shape().str());
  if (k % 2 == 0 || weight.dim(3) != k) throw ShapeError("conv2d: kernel must be square and odd");
  const bool has_bias = bias.defined();
  const int hw = h * w, kk = c_in * k * k;
  std::vector<T> out(static_cast<std::size_t>(n) * c_out * hw);
  CMapR<T> wm(weight.values().data(), c_out, kk);
  // Small column buffers are kept for the backward pass instead of being rebuilt.
  const std::size_t col_size = static_cast<std::size_t>(kk) * hw;
  const bool keep = k > 1 && mtg::grad_mode_flag() && weight.requires_grad() && col_size * n <= kConvColumnCacheLimit;
  auto cache = std::make_shared<std::vector<T>>();
  std::vector<T> col;
  if (keep) cache->resize(col_size * n);
  else if (k > 1) col.resize(col_size);
  for (int s = 0; s < n; ++s) {
    const T* xs = x.values().data() + static_cast<std::ptrdiff_t>(s) * c_in * hw;
    MapR<T> ys(out.data() + static_cast<std::ptrdiff_t>(s) * c_out * hw, c_out, hw);
    if (k == 1) {
      ys.noalias() = wm * CMapR<T>(xs, c_in, hw);
    } else {
      T* cs = keep ? cache->data() + col_size * s : col.data();
      detail::im2col(xs, c_in, h, w, k, dilation, cs);
      ys.noalias() = wm * CMapR<T>(cs, kk, hw);
    }
    if (has_bias)
      for (int co = 0; co < c_out; ++co) ys.row(co).array() += bias.values()[co];
  }
  std::vector<const Tensor<T>*> inputs{&x, &weight};
  if (has_bias) inputs.push_back(&bias);
  return mtg::detail::make_result<T>(
      "conv2d", Shape{n, c_out, h, w}, std::move(out), inputs,
      [n, c_in, h, w, c_out, k, kk, hw, dilation, has_bias, keep, col_size, cache](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        T* gx = mtg::detail::parent_grad(self, 0);
        T* gw = mtg::detail::parent_grad(self, 1);
        T* gb = has_bias ? mtg::detail::parent_grad(self, 2) : nullptr;
        std::vector<T> col, gcol;
        if (k > 1) {
          if (!keep) col.resize(col_size);
          if (gx) gcol.resize(col_size);
        }
        CMapR<T> wm(wv.data(), c_out, kk);
        for (int s = 0; s < n; ++s) {
          CMapR<T> gy(self.grad.data() + static_cast<std::ptrdiff_t>(s) * c_out * hw, c_out, hw);
          const T* xs = xv.data() + static_cast<std::ptrdiff_t>(s) * c_in * hw;
          if (gb)
            for (int co = 0; co < c_out; ++co) gb[co] += gy.row(co).sum();
          if (k == 1) {
            if (gw) MapR<T>(gw, c_out, kk).noalias() += gy * CMapR<T>(xs, c_in, hw).transpose();
            if (gx) MapR<T>(gx + static_cast<std::ptrdiff_t>(s) * c_in * hw, c_in, hw).noalias() += wm.transpose() * gy;
          } else {
            if (gw) {
              const T* cs = keep ? cache->data() + col_size * s : col.data();
              if (!keep) detail::im2col(xs, c_in, h, w, k, dilation, col.data());
              MapR<T>(gw, c_out, kk).noalias() += gy * CMapR<T>(cs, kk, hw).transpose();
            }
            if (gx) {
              MapR<T>(gcol.data(), kk, hw).noalias() = wm.transpose() * gy;
              detail::col2im(gcol.data(), c_in, h, w, k, dilation, gx + static_cast<std::ptrdiff_t>(s) * c_in * hw);
            }
          }
        }
      });
}

/// Running statistics owned by a BatchNorm layer (not on the tape).
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

/// Per-channel batch normalisation over (N, H, W). In training mode batch
/// statistics are used and the running estimates updated.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                     bool training) {
  detail::require_rank(x.shape(), 4, "batch_norm");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t count = static_cast<std::size_t>(n) * hw;
  std::vector<T> mu(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  const auto& xv = x.values();
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      double m = 0, v = 0;
      for (int s = 0; s < n; ++s) {
        const T* p = xv.data() + static_cast<std::ptrdiff_t>(s * c + ch) * hw;
        for (int i = 0; i < hw; ++i) m += p[i];
      }
      m /= static_cast<double>(count);
      for (int s = 0; s < n; ++s) {
        const T* p = xv.data() + static_cast<std::ptrdiff_t>(s * c + ch) * hw;
        for (int i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
      }
      const double biased = v / static_cast<double>(count);
      const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : biased;
      mu[ch] = static_cast<T>(m);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(biased + state.eps));
      state.running_mean[ch] = (1 - state.momentum) * state.running_mean[ch] + state.momentum * static_cast<T>(m);
      state.running_var[ch] = (1 - state.momentum) * state.running_var[ch] + state.momentum * static_cast<T>(unbiased);
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = T(1) / std::sqrt(state.running_var[ch] + state.eps);
    }
  }
  std::vector<T> xhat(x.numel()), out(x.numel());
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = static_cast<std::size_t>(s * c + ch) * hw;
      for (int i = 0; i < hw; ++i) {
        xhat[base + i] = (xv[base + i] - mu[ch]) * inv_std[ch];
        out[base + i] = gamma.values()[ch] * xhat[base + i] + beta.values()[ch];
      }
    }
  return mtg::detail::make_result<T>(
      "batch_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [n, c, hw, count, training, inv_std, xhat = std::move(xhat)](Node<T>& self) {
        const auto& gv = self.parents[1]->value;
        T* gx = mtg::detail::parent_grad(self, 0);
        T* gg = mtg::detail::parent_grad(self, 1);
        T* gbeta = mtg::detail::parent_grad(self, 2);
        for (int ch = 0; ch < c; ++ch) {
          T sum_g = 0, sum_gx = 0;
          for (int s = 0; s < n; ++s) {
            const std::size_t base = static_cast<std::size_t>(s * c + ch) * hw;
            for (int i = 0; i < hw; ++i) {
              sum_g += self.grad[base + i];
              sum_gx += self.grad[base + i] * xhat[base + i];
            }
          }
          if (gg) gg[ch] += sum_gx;
          if (gbeta) gbeta[ch] += sum_g;
          if (!gx) continue;
          const T scale = gv[ch] * inv_std[ch];
          for (int s = 0; s < n; ++s) {
            const std::size_t base = static_cast<std::size_t>(s * c + ch) * hw;
            for (int i = 0; i < hw; ++i) {
              if (training) {
                const T m = static_cast<T>(count);
                gx[base + i] += scale * (self.grad[base + i] - sum_g / m - xhat[base + i] * sum_gx / m);
              } else {
                gx[base + i] += scale * self.grad[base + i];
              }
            }
          }
        }
      });
}

/// 2x2 max pooling with stride 2. Spatial sizes must be even.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "max_pool2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("max_pool2 needs even spatial size, got " + x.shape().str());
  const int ho = h / 2, wo = w / 2;
  std::vector<T> out(static_cast<std::size_t>(n) * c * ho * wo);
  std::vector<std::uint32_t> arg(out.size());
  const auto& xv = x.values();
  for (int sc = 0; sc < n * c; ++sc) {
    const std::size_t ib = static_cast<std::size_t>(sc) * h * w;
    const std::size_t ob = static_cast<std::size_t>(sc) * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) {
        std::size_t best = ib + static_cast<std::size_t>(2 * y) * w + 2 * xx;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t j = ib + static_cast<std::size_t>(2 * y + dy) * w + 2 * xx + dx;
            if (xv[j] > xv[best]) best = j;
          }
        out[ob + y * wo + xx] = xv[best];
        arg[ob + y * wo + xx] = static_cast<std::uint32_t>(best);
      }
  }
  return mtg::detail::make_result<T>("max_pool2", Shape{n, c, ho, wo}, std::move(out), {&x}, [arg](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

namespace detail {

struct LerpTap {
  int i0, i1;
  double w0, w1;
};

/// Half-pixel-centre source taps (align_corners = false).
inline std::vector<LerpTap> bilinear_taps(int in, int out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    const double f = src - i0;
    taps[o] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize of (N, C, H, W) to (N, C, out_h, out_w).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int out_h, int out_w) {
  detail::require_rank(x.shape(), 4, "resize_bilinear");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == out_h && w == out_w) return reshape(x, x.shape());
  const auto ty = detail::bilinear_taps(h, out_h);
  const auto tx = detail::bilinear_taps(w, out_w);
  std::vector<T> out(static_cast<std::size_t>(n) * c * out_h * out_w);
  const auto& xv = x.values();
  for (int sc = 0; sc < n * c; ++sc) {
    const T* src = xv.data() + static_cast<std::ptrdiff_t>(sc) * h * w;
    T* dst = out.data() + static_cast<std::ptrdiff_t>(sc) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (int xx = 0; xx < out_w; ++xx) {
        const auto& b = tx[xx];
        dst[y * out_w + xx] = static_cast<T>(a.w0 * (b.w0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1]) +
                                             a.w1 * (b.w0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1]));
      }
    }
  }
  return mtg::detail::make_result<T>("resize_bilinear", Shape{n, c, out_h, out_w}, std::move(out), {&x},
                                     [n, c, h, w, out_h, out_w, ty, tx](Node<T>& self) {
                                       T* g = mtg::detail::parent_grad(self, 0);
                                       if (!g) return;
                                       for (int sc = 0; sc < n * c; ++sc) {
                                         T* dst = g + static_cast<std::ptrdiff_t>(sc) * h * w;
                                         const T* go = self.grad.data() + static_cast<std::ptrdiff_t>(sc) * out_h * out_w;
                                         for (int y = 0; y < out_h; ++y) {
                                           const auto& a = ty[y];
                                           for (int xx = 0; xx < out_w; ++xx) {
                                             const auto& b = tx[xx];
                                             const T v = go[y * out_w + xx];
                                             dst[a.i0 * w + b.i0] += static_cast<T>(a.w0 * b.w0) * v;
                                             dst[a.i0 * w + b.i1] += static_cast<T>(a.w0 * b.w1) * v;
                                             dst[a.i1 * w + b.i0] += static_cast<T>(a.w1 * b.w0) * v;
                                             dst[a.i1 * w + b.i1] += static_cast<T>(a.w1 * b.w1) * v;
                                           }
                                         }
                                       }
                                     });
}

/// Inverted dropout: zeroes each element with probability p and rescales the
/// survivors by 1/(1-p).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ValidationError("dropout rate must lie in [0, 1)");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.uniform() < p ? T(0) : keep_scale;
    out[i] = x.values()[i] * mask[i];
  }
  return mtg::detail::make_result<T>("dropout", x.shape(), std::move(out), {&x}, [mask = std::move(mask)](Node<T>& self) {
    if (T* g = mtg::detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

}  // namespace mtg::ops
