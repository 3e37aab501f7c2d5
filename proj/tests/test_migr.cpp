#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "mtgnet/eval/gradcheck.hpp"
#include "mtgnet/eval/oracles.hpp"
#include "mtgnet/model/migr.hpp"

using namespace mtg;
using Td = Tensor<double>;
using Inputs = std::vector<Td>;

namespace {

Td rand_t(int r, int c, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(static_cast<std::size_t>(r) * c);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Td::from(Shape{r, c}, v);
}

oracle::Mat to_mat(const Td& t) { return {t.dim(0), t.dim(1), t.values()}; }

double max_abs_diff(const Td& t, const oracle::Mat& m) {
  double d = 0;
  for (std::size_t i = 0; i < m.a.size(); ++i) d = std::max(d, std::abs(t.values()[i] - m.a[i]));
  return d;
}

oracle::InteractionWeights weights_of(InteractionParams<double>& p) {
  return {to_mat(p.key.first().weight()),   to_mat(p.key.second().weight()),
          to_mat(p.value.first().weight()), to_mat(p.value.second().weight()),
          to_mat(p.query.first().weight()), to_mat(p.query.second().weight()),
          p.weight.item()};
}

}  // namespace

TEST(Project, EquidistantRowIsHalfHalf) {
  const Td f = Td::from(Shape{1, 2}, {0.0, 0.0});
  const Td t = Td::from(Shape{2, 2}, {1.0, 0.0, -1.0, 0.0});
  const auto g = graph_project(f, t, Td::filled(Shape{2, 2}, 1.0));
  EXPECT_DOUBLE_EQ(g.assignment.values()[0], 0.5);
  EXPECT_DOUBLE_EQ(g.assignment.values()[1], 0.5);
}

TEST(Project, DegenerateCenterHit) {
  const Td f = Td::from(Shape{4, 2}, {1, 2, 1, 2, 1, 2, 1, 2});
  const Td t = Td::from(Shape{2, 2}, {1, 2, 100, 100});
  const auto g = graph_project(f, t, Td::filled(Shape{2, 2}, 1.0));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(g.assignment.values()[i * 2], 1.0, 1e-12);
  EXPECT_EQ(g.nodes.values()[0], 0.0);
  EXPECT_EQ(g.nodes.values()[2], 0.0);
}

TEST(Project, RejectsNonPositiveScale) {
  Rng rng(1);
  EXPECT_THROW(graph_project(rand_t(6, 3, rng), rand_t(2, 3, rng), Td::filled(Shape{2, 3}, 0.0)), ValidationError);
  EXPECT_THROW(graph_project(rand_t(6, 3, rng), rand_t(2, 3, rng), Td::filled(Shape{2, 3}, -1.0)), ValidationError);
}

TEST(Project, KOneGivesUnitColumn) {
  Rng rng(2);
  const auto g = graph_project(rand_t(9, 4, rng), rand_t(1, 4, rng), rand_t(1, 4, rng, 0.5, 2));
  for (double v : g.assignment.values()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Project, MatchesOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int p = rng.range(1, 64), c = rng.range(1, 6), k = rng.range(1, 8);
    const Td f = rand_t(p, c, rng, -2, 2), t = rand_t(k, c, rng, -2, 2), s = rand_t(k, c, rng, 0.3, 2.0);
    const auto g = graph_project(f, t, s);
    const auto o = oracle::project(to_mat(f), to_mat(t), to_mat(s));
    EXPECT_LT(max_abs_diff(g.nodes, o.nodes), 1e-9);
    EXPECT_LT(max_abs_diff(g.assignment, o.assignment), 1e-9);
    EXPECT_LT(max_abs_diff(g.adjacency, oracle::gram(o.nodes)), 1e-9);
  }
}

TEST(Project, InvariantsOver1000Draws) {
  Rng rng(4);
  for (int trial = 0; trial < 1000; ++trial) {
    const int p = rng.range(1, 40), c = rng.range(1, 8), k = rng.range(1, 12);
    const double spread = rng.uniform(0.1, 10.0);
    const Td f = rand_t(p, c, rng, -spread, spread), t = rand_t(k, c, rng, -spread, spread);
    const Td s = rand_t(k, c, rng, 0.05, 3.0);
    const auto g = graph_project(f, t, s);
    for (int i = 0; i < p; ++i) {
      double sum = 0;
      for (int m = 0; m < k; ++m) {
        const double v = g.assignment.values()[i * k + m];
        ASSERT_GE(v, 0.0);
        sum += v;
      }
      ASSERT_NEAR(sum, 1.0, 1e-6);
    }
    for (int m = 0; m < k; ++m) {
      double n2 = 0;
      for (int j = 0; j < c; ++j) n2 += std::pow(g.nodes.values()[j * k + m], 2);
      const double n = std::sqrt(n2);
      ASSERT_TRUE(n == 0.0 || std::abs(n - 1.0) <= 1e-6) << n;
    }
    Eigen::MatrixXd a(k, k);
    for (int x = 0; x < k; ++x)
      for (int y = 0; y < k; ++y) a(x, y) = g.adjacency.values()[x * k + y];
    ASSERT_LT((a - a.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    ASSERT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a).eigenvalues().minCoeff(), -1e-8);
  }
}

TEST(Adjacency, Examples) {
  const Td eye = Td::from(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(adjacency(eye).values(), eye.values());
  const Td dup = Td::from(Shape{2, 2}, {0.6, 0.6, 0.8, 0.8});
  EXPECT_NEAR(adjacency(dup).values()[1], 1.0, 1e-15);
  Rng rng(5);
  const Td g = rand_t(4, 3, rng);
  EXPECT_LT(max_abs_diff(adjacency(g), oracle::gram(to_mat(g))), 1e-12);
}

TEST(Interact, ZeroTransferIsIdentity) {
  Rng rng(6);
  InteractionParams<double> p(4, 4, rng);
  const Td task = rand_t(4, 3, rng);
  EXPECT_EQ(graph_interact(rand_t(4, 3, rng), task, p).values(), task.values());
}

TEST(Interact, ZeroRegionGraphIsIdentity) {
  Rng rng(7);
  InteractionParams<double> p(4, 4, rng);
  p.weight.values()[0] = 0.7;
  const Td task = rand_t(4, 3, rng);
  EXPECT_EQ(graph_interact(Td::zeros(Shape{4, 3}), task, p).values(), task.values());
}

TEST(Interact, KMismatchIsShapeError) {
  Rng rng(8);
  InteractionParams<double> p(4, 4, rng);
  EXPECT_THROW(graph_interact(rand_t(4, 3, rng), rand_t(4, 2, rng), p), ShapeError);
}

TEST(Interact, MatchesOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = rng.range(1, 6), k = rng.range(1, 8), d = rng.range(1, 5);
    InteractionParams<double> p(c, d, rng);
    p.weight.values()[0] = rng.uniform(-1, 1);
    const Td reg = rand_t(c, k, rng), task = rand_t(c, k, rng);
    EXPECT_LT(max_abs_diff(graph_interact(reg, task, p), oracle::interact(to_mat(reg), to_mat(task), weights_of(p))), 1e-9);
  }
}

TEST(Reason, Examples) {
  Rng rng(10);
  const Td g = rand_t(4, 3, rng);
  const Td i3 = Td::from(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Td i4 = Td::from(Shape{4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  EXPECT_EQ(graph_reason(g, i3, i4, Activation::kIdentity).values(), g.values());
  const Td zeroed = graph_reason(g, Td::zeros(Shape{3, 3}), rand_t(4, 4, rng), Activation::kRelu);
  for (double v : zeroed.values()) EXPECT_EQ(v, 0.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = rng.range(1, 6), k = rng.range(1, 8);
    const Td n = rand_t(c, k, rng), a = rand_t(k, k, rng), m = rand_t(c, c, rng);
    for (bool relu : {true, false})
      EXPECT_LT(max_abs_diff(graph_reason(n, a, m, relu ? Activation::kRelu : Activation::kIdentity),
                             oracle::reason(to_mat(n), to_mat(a), to_mat(m), relu)),
                1e-9);
  }
}

TEST(Reproject, Examples) {
  Rng rng(11);
  const Td f = rand_t(9, 4, rng), q = rand_t(9, 3, rng);
  EXPECT_EQ(graph_reproject(q, Td::zeros(Shape{4, 3}), f).values(), f.values());
  const Td node = rand_t(4, 1, rng);
  const Td out = graph_reproject(Td::filled(Shape{9, 1}, 1.0), node, f);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(out.values()[i * 4 + j], f.values()[i * 4 + j] + node.values()[j]);
  EXPECT_THROW(graph_reproject(rand_t(8, 3, rng), rand_t(4, 3, rng), f), ShapeError);
  for (int trial = 0; trial < 100; ++trial) {
    const int p = rng.range(1, 64), c = rng.range(1, 6), k = rng.range(1, 8);
    const Td ff = rand_t(p, c, rng), qq = rand_t(p, k, rng), nn = rand_t(c, k, rng);
    EXPECT_LT(max_abs_diff(graph_reproject(qq, nn, ff), oracle::reproject(to_mat(qq), to_mat(nn), to_mat(ff))), 1e-9);
  }
}

TEST(Migr, ResidualIdentityWithZeroTransferAndWeights) {
  Rng rng(12);
  GraphConfig cfg;
  cfg.nodes = 3;
  Migr<double> migr(4, cfg, true, rng);
  for (double& v : migr.reason_boundary().values()) v = 0.0;
  for (double& v : migr.reason_shape().values()) v = 0.0;
  std::vector<double> a(2 * 4 * 3 * 3), b(a.size()), c(a.size());
  for (auto* v : {&a, &b, &c})
    for (auto& x : *v) x = rng.uniform(-1, 1);
  const Td fr = Td::from(Shape{2, 4, 3, 3}, a), fb = Td::from(Shape{2, 4, 3, 3}, b), fs = Td::from(Shape{2, 4, 3, 3}, c);
  const auto out = migr(fr, fb, fs);
  EXPECT_EQ(out.boundary.values(), fb.values());
  EXPECT_EQ(out.shape.values(), fs.values());
  // The region output is the reprojection of the un-reasoned region graph.
  const Td rows = ops::to_pixel_major(fr, 1);
  const auto g = migr.projection_region().project(rows);
  const Td expect = graph_reproject(g.assignment, g.nodes, rows);
  EXPECT_EQ(ops::to_pixel_major(out.region, 1).values(), expect.values());
}

TEST(Migr, NodePermutationLeavesReprojectionUnchanged) {
  Rng rng(13);
  const int p = 9, c = 4, k = 3;
  const Td f = rand_t(p, c, rng), t = rand_t(k, c, rng), s = rand_t(k, c, rng, 0.5, 1.5);
  const std::vector<int> perm{2, 0, 1};
  std::vector<double> tp(t.numel()), sp(s.numel());
  for (int m = 0; m < k; ++m)
    for (int j = 0; j < c; ++j) {
      tp[m * c + j] = t.values()[perm[m] * c + j];
      sp[m * c + j] = s.values()[perm[m] * c + j];
    }
  const auto g = graph_project(f, t, s);
  const auto gp = graph_project(f, Td::from(Shape{k, c}, tp), Td::from(Shape{k, c}, sp));
  for (int m = 0; m < k; ++m) {
    for (int i = 0; i < p; ++i) EXPECT_NEAR(gp.assignment.values()[i * k + m], g.assignment.values()[i * k + perm[m]], 1e-14);
    for (int j = 0; j < c; ++j) EXPECT_NEAR(gp.nodes.values()[j * k + m], g.nodes.values()[j * k + perm[m]], 1e-14);
    for (int m2 = 0; m2 < k; ++m2)
      EXPECT_NEAR(gp.adjacency.values()[m * k + m2], g.adjacency.values()[perm[m] * k + perm[m2]], 1e-14);
  }
  const Td m = rand_t(c, c, rng);
  const Td out = graph_reproject(g.assignment, graph_reason(g.nodes, g.adjacency, m, Activation::kRelu), f);
  const Td outp = graph_reproject(gp.assignment, graph_reason(gp.nodes, gp.adjacency, m, Activation::kRelu), f);
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.values()[i], outp.values()[i], 1e-12);
}

TEST(Migr, GradientsThroughEveryStage) {
  Rng rng(14);
  const int p = 9, c = 4, k = 3;
  InteractionParams<double> ip(c, c, rng);
  ip.weight.values()[0] = 0.5;
  const Td probe_w = rand_t(p, c, rng);
  auto block = [&](const Inputs& x) {
    // x: features, centres, log-scales, region nodes, reasoning weight
    const auto g = graph_project(x[0], x[1], ops::exp(x[2]));
    const Td inter = graph_interact(x[3], g.nodes, ip);
    const Td reasoned = graph_reason(inter, g.adjacency, x[4], Activation::kIdentity);
    return ops::sum(ops::mul(graph_reproject(g.assignment, reasoned, x[0]), probe_w));
  };
  for (int trial = 0; trial < 5; ++trial) {
    const auto r = fd_gradient_check(block,
                                     {rand_t(p, c, rng), rand_t(k, c, rng), rand_t(k, c, rng, -0.3, 0.3),
                                      rand_t(c, k, rng), rand_t(c, c, rng)},
                                     1e-4);
    EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_input << ":" << r.worst_index;
  }
  // The interaction MLPs and the transfer weight themselves.
  const Td reg = rand_t(c, k, rng), task = rand_t(c, k, rng), probe = rand_t(c, k, rng);
  auto via_params = [&](const Inputs& x) {
    InteractionParams<double> q = ip;
    q.key.first().weight() = x[0];
    q.value.second().weight() = x[1];
    q.query.first().weight() = x[2];
    q.weight = x[3];
    return ops::sum(ops::mul(graph_interact(reg, task, q), probe));
  };
  const auto r = fd_gradient_check(
      via_params, {rand_t(c, c, rng), rand_t(c, c, rng), rand_t(c, c, rng), Td::from(Shape{1, 1}, {0.3})}, 1e-4);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_input << ":" << r.worst_index;
}
