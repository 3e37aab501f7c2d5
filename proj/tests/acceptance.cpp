// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.
//
//   acceptance [--group fast|toy|ablation|all] [--workdir DIR]

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "mtgnet/eval/gradcheck.hpp"
#include "mtgnet/eval/oracles.hpp"
#include "mtgnet/mtgnet.hpp"

using namespace mtg;
namespace fs = std::filesystem;
using Td = Tensor<double>;
using Inputs = std::vector<Td>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void run_criterion(int id, const std::string& title, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = s < budget_s;
  const bool pass = o.pass && in_time;
  if (!pass) ++g_failures;
  std::ostringstream line;
  line << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " | " << o.detail;
  line.precision(1);
  line << std::fixed << " | " << s << " s (budget " << budget_s << " s" << (in_time ? "" : ", exceeded") << ")";
  std::cout << line.str() << std::endl;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Td rand_t(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(s.numel());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Td::from(s, v);
}

Td rand_binary(Shape s, Rng& rng) {
  std::vector<double> v(s.numel());
  for (auto& x : v) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return Td::from(s, v);
}

oracle::Mat to_mat(const Td& t) { return {t.dim(0), t.dim(1), t.values()}; }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

oracle::InteractionWeights weights_of(InteractionParams<double>& p) {
  return {to_mat(p.key.first().weight()),   to_mat(p.key.second().weight()),
          to_mat(p.value.first().weight()), to_mat(p.value.second().weight()),
          to_mat(p.query.first().weight()), to_mat(p.query.second().weight()),
          p.weight.item()};
}

EnhanceParams<double> random_enhance(int c, Rng& rng) {
  EnhanceParams<double> p(c, rng);
  for (auto* b : {&p.f_w.bias(), &p.f_eta.bias()})
    for (double& v : b->values()) v = rng.uniform(-0.5, 0.5);
  return p;
}

oracle::EnhanceWeights weights_of(const EnhanceParams<double>& p) {
  return {to_mat(p.f_w.weight()), to_mat(p.f_w.bias()), to_mat(p.f_eta.weight()), to_mat(p.f_eta.bias())};
}

// ---------------------------------------------------------------- fast group

Outcome migr_invariants() {
  Rng rng(101);
  double worst_row = 0, worst_norm = 0, worst_sym = 0, min_eig = INFINITY;
  int negative = 0;
  const int draws = 1000;
  for (int trial = 0; trial < draws; ++trial) {
    const int p = rng.range(1, 64), c = rng.range(1, 8), k = rng.range(1, 12);
    const double spread = rng.uniform(0.1, 10.0);
    const Td f = rand_t(Shape{p, c}, rng, -spread, spread), t = rand_t(Shape{k, c}, rng, -spread, spread);
    const auto g = graph_project(f, t, rand_t(Shape{k, c}, rng, 0.05, 3.0));
    const auto& q = g.assignment.values();
    for (int i = 0; i < p; ++i) {
      double sum = 0;
      for (int m = 0; m < k; ++m) {
        negative += q[i * k + m] < 0;
        sum += q[i * k + m];
      }
      worst_row = std::max(worst_row, std::abs(sum - 1.0));
    }
    for (int m = 0; m < k; ++m) {
      double n2 = 0;
      for (int j = 0; j < c; ++j) n2 += std::pow(g.nodes.values()[j * k + m], 2);
      const double n = std::sqrt(n2);
      if (n != 0.0) worst_norm = std::max(worst_norm, std::abs(n - 1.0));
    }
    Eigen::MatrixXd a(k, k);
    for (int x = 0; x < k; ++x)
      for (int y = 0; y < k; ++y) a(x, y) = g.adjacency.values()[x * k + y];
    worst_sym = std::max(worst_sym, (a - a.transpose()).cwiseAbs().maxCoeff());
    min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a).eigenvalues().minCoeff());
  }
  return {worst_row < 1e-6 && negative == 0 && worst_norm <= 1e-6 && worst_sym <= 1e-12 && min_eig >= -1e-8,
          std::to_string(draws) + " draws, max|row sum-1| " + fmt(worst_row) + ", max|norm-1| " + fmt(worst_norm) +
              ", max asym " + fmt(worst_sym) + ", min eig " + fmt(min_eig)};
}

Outcome oracle_equivalence() {
  Rng rng(202);
  const int n = 100;
  std::vector<std::pair<std::string, double>> worst = {{"project", 0},  {"adjacency", 0}, {"interact", 0},
                                                       {"reason", 0},   {"reproject", 0}, {"support", 0},
                                                       {"enhance", 0},  {"meanvar", 0},   {"uce", 0}};
  auto bump = [&](std::size_t i, double d) { worst[i].second = std::max(worst[i].second, d); };
  for (int trial = 0; trial < n; ++trial) {
    const int p = rng.range(1, 64), c = rng.range(1, 6), k = rng.range(1, 8);
    const Td f = rand_t(Shape{p, c}, rng, -2, 2), t = rand_t(Shape{k, c}, rng, -2, 2), s = rand_t(Shape{k, c}, rng, 0.3, 2.0);
    const auto g = graph_project(f, t, s);
    const auto o = oracle::project(to_mat(f), to_mat(t), to_mat(s));
    bump(0, std::max(max_abs_diff(g.nodes.values(), o.nodes.a), max_abs_diff(g.assignment.values(), o.assignment.a)));
    bump(1, max_abs_diff(g.adjacency.values(), oracle::gram(o.nodes).a));

    InteractionParams<double> ip(c, rng.range(1, 5), rng);
    ip.weight.values()[0] = rng.uniform(-1, 1);
    const Td reg = rand_t(Shape{c, k}, rng), task = rand_t(Shape{c, k}, rng);
    bump(2, max_abs_diff(graph_interact(reg, task, ip).values(), oracle::interact(to_mat(reg), to_mat(task), weights_of(ip)).a));

    const Td adj = rand_t(Shape{k, k}, rng), m = rand_t(Shape{c, c}, rng);
    for (bool relu : {true, false})
      bump(3, max_abs_diff(graph_reason(reg, adj, m, relu ? Activation::kRelu : Activation::kIdentity).values(),
                           oracle::reason(to_mat(reg), to_mat(adj), to_mat(m), relu).a));

    const Td q = rand_t(Shape{p, k}, rng);
    bump(4, max_abs_diff(graph_reproject(q, reg, f).values(), oracle::reproject(to_mat(q), to_mat(reg), to_mat(f)).a));

    ProjectionParams<double> proj(k, c, rng);
    for (double& v : proj.log_scale.values()) v = rng.uniform(-0.5, 0.5);
    bump(5, max_abs_diff(build_support_nodes(f, proj).values(),
                         oracle::project(to_mat(f), to_mat(proj.centers), to_mat(proj.sigma())).nodes.a));

    const auto ep = random_enhance(c, rng);
    bump(6, max_abs_diff(enhance(f, reg, ep).values(), oracle::enhance(to_mat(f), to_mat(reg), weights_of(ep)).a));

    const int z = rng.range(1, 12), h = rng.range(1, 8), w = rng.range(1, 8);
    std::vector<Td> samples;
    std::vector<std::vector<double>> raw;
    for (int i = 0; i < z; ++i) {
      samples.push_back(rand_t(Shape{1, 1, h, w}, rng, 0, 1));
      raw.push_back(samples.back().values());
    }
    const auto u = mean_variance(samples);
    std::vector<double> mean, var;
    oracle::mean_variance(raw, mean, var);
    bump(7, std::max(max_abs_diff(u.mean, mean), max_abs_diff(u.variance, var)));

    const Td pr = rand_t(Shape{1, 1, h, w}, rng, 0.02, 0.98), gt = rand_binary(Shape{1, 1, h, w}, rng);
    std::vector<double> v(pr.numel());
    for (auto& x : v) x = rng.uniform(0, 0.25);
    bump(8, std::abs(uce_loss(pr, gt, v).item() - oracle::uce(pr.values(), gt.values(), v)));
  }
  bool ok = true;
  std::string detail = std::to_string(n) + " instances each, max abs diff:";
  for (const auto& [name, d] : worst) {
    ok = ok && d < 1e-9;
    detail += " " + name + " " + fmt(d);
  }
  return {ok, detail};
}

Outcome degeneracies() {
  Rng rng(303);
  bool interact_ok = true, reproject_ok = true;
  double uce_err = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int c = rng.range(1, 6), k = rng.range(1, 8), p = rng.range(1, 64);
    InteractionParams<double> ip(c, rng.range(1, 5), rng);
    ip.weight.values()[0] = 0.0;
    const Td task = rand_t(Shape{c, k}, rng);
    interact_ok = interact_ok && graph_interact(rand_t(Shape{c, k}, rng), task, ip).values() == task.values();
    const Td f = rand_t(Shape{p, c}, rng);
    reproject_ok = reproject_ok && graph_reproject(rand_t(Shape{p, k}, rng, 0, 1), Td::zeros(Shape{c, k}), f).values() == f.values();
    const Shape s{rng.range(1, 3), 1, rng.range(1, 8), rng.range(1, 8)};
    const Td pr = rand_t(s, rng, 0.02, 0.98), gt = rand_binary(s, rng);
    double ref = 0;
    for (std::size_t i = 0; i < s.numel(); ++i) ref += oracle::bce(pr.values()[i], gt.values()[i]);
    ref /= static_cast<double>(s.numel());
    uce_err = std::max(uce_err, std::abs(uce_loss(pr, gt, std::vector<double>(s.numel(), 0.0)).item() - ref));
  }

  ModelConfig mc;
  mc.backbone.base_channels = 4;
  mc.backbone.routed_channels = 8;
  mc.backbone.aux_decoder_width = 4;
  mc.backbone.dropout_rate = 0.0;
  mc.graph.nodes = 3;
  MtgNet<float> model(mc, 7);
  std::vector<float> img(2 * 32 * 32);
  for (auto& v : img) v = static_cast<float>(rng.uniform());
  const auto u = summarize_samples(mc_sample(model, Tensor<float>::from(Shape{2, 1, 32, 32}, img), 5, 11));
  double max_var = 0;
  for (const auto* m : {&u.region, &u.boundary, &u.shape, &u.vessel})
    for (double v : m->variance) max_var = std::max(max_var, v);

  return {interact_ok && reproject_ok && uce_err <= 1e-12 && max_var == 0.0,
          std::string("zero transfer identity ") + (interact_ok ? "exact" : "BROKEN") + ", zero nodes reprojection " +
              (reproject_ok ? "exact" : "BROKEN") + ", |uce(V=0) - mean BCE| " + fmt(uce_err) +
              ", dropout-off max variance " + fmt(max_var)};
}

Outcome gradient_checks() {
  Rng rng(404);
  const double eps = 1e-4;
  const int p = 9, c = 4, k = 3;
  std::vector<std::pair<std::string, double>> worst;
  auto check = [&](const std::string& name, const std::function<Td(const Inputs&)>& fn, const std::function<Inputs()>& gen) {
    double w = 0;
    for (int trial = 0; trial < 5; ++trial) w = std::max(w, fd_gradient_check(fn, gen(), eps).max_relative_error);
    worst.emplace_back(name, w);
  };

  const Td probe_pc = rand_t(Shape{p, c}, rng), probe_ck = rand_t(Shape{c, k}, rng), probe_kk = rand_t(Shape{k, k}, rng);
  check(
      "project",
      [&](const Inputs& x) {
        const auto g = graph_project(x[0], x[1], ops::exp(x[2]));
        return ops::add(ops::add(ops::sum(ops::mul(g.nodes, probe_ck)), ops::sum(ops::mul(g.adjacency, probe_kk))),
                        ops::sum(ops::square(g.assignment)));
      },
      [&] { return Inputs{rand_t(Shape{p, c}, rng), rand_t(Shape{k, c}, rng), rand_t(Shape{k, c}, rng, -0.3, 0.3)}; });

  InteractionParams<double> ip(c, c, rng);
  ip.weight.values()[0] = 0.5;
  check(
      "interact",
      [&](const Inputs& x) {
        InteractionParams<double> q = ip;
        q.key.first().weight() = x[2];
        q.value.second().weight() = x[3];
        q.query.first().weight() = x[4];
        q.weight = x[5];
        return ops::sum(ops::mul(graph_interact(x[0], x[1], q), probe_ck));
      },
      [&] {
        return Inputs{rand_t(Shape{c, k}, rng), rand_t(Shape{c, k}, rng), rand_t(Shape{c, c}, rng),
                      rand_t(Shape{c, c}, rng), rand_t(Shape{c, c}, rng), Td::from(Shape{1, 1}, {0.3})};
      });

  check(
      "reason",
      [&](const Inputs& x) { return ops::sum(ops::mul(graph_reason(x[0], x[1], x[2], Activation::kRelu), probe_ck)); },
      [&] { return Inputs{rand_t(Shape{c, k}, rng), rand_t(Shape{k, k}, rng), rand_t(Shape{c, c}, rng)}; });

  check(
      "reproject",
      [&](const Inputs& x) { return ops::sum(ops::mul(graph_reproject(x[0], x[1], x[2]), probe_pc)); },
      [&] { return Inputs{rand_t(Shape{p, k}, rng), rand_t(Shape{c, k}, rng), rand_t(Shape{p, c}, rng)}; });

  const auto ep = random_enhance(c, rng);
  check(
      "enhance",
      [&](const Inputs& x) {
        EnhanceParams<double> q = ep;
        q.f_w.weight() = x[2];
        q.f_eta.weight() = x[3];
        return ops::sum(ops::mul(enhance(x[0], x[1], q), probe_pc));
      },
      [&] {
        return Inputs{rand_t(Shape{p, c}, rng), rand_t(Shape{c, k}, rng), rand_t(Shape{c, c}, rng),
                      rand_t(Shape{2 * c, c}, rng)};
      });

  const Shape img{2, 1, 3, 3};
  const Td gt = rand_binary(img, rng);
  std::vector<double> v(img.numel());
  for (auto& x : v) x = rng.uniform(0, 0.25);
  check(
      "soft-dice", [&](const Inputs& x) { return dice_loss(x[0], gt); },
      [&] { return Inputs{rand_t(img, rng, 0.05, 0.95)}; });
  check(
      "uce", [&](const Inputs& x) { return uce_loss(x[0], gt, v); },
      [&] { return Inputs{rand_t(img, rng, 0.05, 0.95)}; });

  bool ok = true;
  std::string detail = "eps 1e-4, float64, max relative error:";
  for (const auto& [name, w] : worst) {
    ok = ok && w < 1e-4;
    detail += " " + name + " " + fmt(w);
  }
  return {ok, detail};
}

RunConfig tiny_run(int epochs, int count) {
  RunConfig c;
  c.model.backbone.base_channels = 2;
  c.model.backbone.routed_channels = 4;
  c.model.backbone.aux_decoder_width = 2;
  c.model.graph.nodes = 2;
  c.train.epochs = epochs;
  c.train.input_size = 32;
  c.train.mc_samples = 2;
  c.train.uce_refresh_samples = 2;
  c.train.lambda_batch = 2;
  c.data.synth.image_size = 32;
  c.data.synthetic_count = count;
  c.validate();
  return c;
}

Outcome schedule_fidelity() {
  const std::vector<int> full = lambda_update_epochs(300, 50);
  const bool full_ok = full == std::vector<int>{50, 100, 150, 200, 250, 300};

  RunConfig cfg = tiny_run(30, 8);
  cfg.train.weight_update_period = 5;
  cfg.train.eval_every = 10;
  Trainer<float> trainer(cfg, prepare_dataset(cfg));
  const RunRecord& r = trainer.run();
  bool epochs_ok = r.lambda_history.size() == 6;
  double worst_sum = 0;
  for (std::size_t i = 0; i < r.lambda_history.size(); ++i) {
    epochs_ok = epochs_ok && r.lambda_history[i].epoch == 5 * static_cast<int>(i + 1);
    worst_sum = std::max(worst_sum, std::abs(r.lambda_history[i].weights.sum() - 1.0));
  }
  return {full_ok && epochs_ok && worst_sum <= 1e-9,
          "300/50 schedule " + std::string(full_ok ? "{50..300}" : "WRONG") + "; surrogate logged " +
              std::to_string(r.lambda_history.size()) + " updates" + (epochs_ok ? " at epochs 5..30" : " (wrong epochs)") +
              ", max|sum-1| " + fmt(worst_sum)};
}

Grid random_mask(int h, int w, double p, Rng& rng) {
  Grid g(h, w);
  for (double& v : g.data) v = rng.bernoulli(p) ? 1.0 : 0.0;
  return g;
}

// Two-sided Student-t tail from the finite trigonometric series (integer dof).
double student_two_sided(double t, int nu) {
  const double th = std::atan(std::abs(t) / std::sqrt(static_cast<double>(nu)));
  const double s = std::sin(th), c = std::cos(th);
  double a = 0;
  if (nu % 2 == 0) {
    double term = 1, sum = 1;
    for (int k = 2; k <= nu - 2; k += 2) {
      term *= c * c * (k - 1) / k;
      sum += term;
    }
    a = s * sum;
  } else {
    double sum = 0;
    if (nu > 1) {
      double term = c;
      sum = c;
      for (int k = 3; k <= nu - 2; k += 2) {
        term *= c * c * (k - 1) / k;
        sum += term;
      }
    }
    a = 2.0 / std::numbers::pi * (th + s * sum);
  }
  return 1.0 - a;
}

Outcome metric_suite() {
  Rng rng(909);
  double worst = 0;
  bool ranges = true, counts = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = rng.range(1, 24), w = rng.range(1, 24);
    const Grid p = random_mask(h, w, rng.uniform(0, 1), rng), g = random_mask(h, w, rng.uniform(0, 1), rng);
    const auto c = confusion_counts(p, g);
    counts = counts && c.tp + c.fp + c.fn + c.tn == static_cast<std::int64_t>(h) * w;
    const auto m = metrics_from_counts(c);
    for (double v : {m.dice, m.iou, m.precision, m.recall}) ranges = ranges && v >= 0 && v <= 1;
    worst = std::max(worst, std::abs(m.iou - m.dice / (2.0 - m.dice)));
    worst = std::max(worst, std::abs(m.dice - 2 * m.iou / (1 + m.iou)));
    if (c.tp > 0) worst = std::max(worst, std::abs(m.dice - 2 * m.precision * m.recall / (m.precision + m.recall)));
    if (c.tp + c.fp > 0) worst = std::max(worst, std::abs(m.precision - static_cast<double>(c.tp) / (c.tp + c.fp)));
    if (c.tp + c.fn > 0) worst = std::max(worst, std::abs(m.recall - static_cast<double>(c.tp) / (c.tp + c.fn)));
  }
  double t_err = 0, p_err = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.range(2, 30);
    std::vector<double> pre(n), post(n);
    for (int i = 0; i < n; ++i) {
      pre[i] = rng.uniform(0, 1);
      post[i] = pre[i] + rng.normal(0.05, 0.1);
    }
    double mean = 0;
    for (int i = 0; i < n; ++i) mean += post[i] - pre[i];
    mean /= n;
    double ss = 0;
    for (int i = 0; i < n; ++i) ss += std::pow(post[i] - pre[i] - mean, 2);
    const double t = mean / std::sqrt(ss / (n - 1) / n);
    const auto r = paired_t_test(pre, post);
    t_err = std::max(t_err, std::abs(r.t_statistic - t) / std::max(1.0, std::abs(t)));
    p_err = std::max(p_err, std::abs(r.p_value - student_two_sided(t, n - 1)));
  }
  return {counts && ranges && worst < 1e-12 && t_err <= 1e-9 && p_err <= 1e-9,
          "1000 mask pairs, max identity error " + fmt(worst) + (ranges ? "" : ", value outside [0,1]") +
              "; 100 t-tests, max t error " + fmt(t_err) + ", max p error " + fmt(p_err)};
}

Outcome cascade_contract() {
  RunConfig cfg = tiny_run(1, 8);
  MtgNet<float> model(cfg.model, 4);
  Rng rng(1010);
  NoGradGuard no_grad;
  bool zero_ok = true, hard_ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<float> img(2 * 32 * 32);
    for (auto& v : img) v = static_cast<float>(rng.uniform(0.0, 1.0));
    const auto x = Tensor<float>::from(Shape{2, 1, 32, 32}, img);
    Tensor<float> masked;
    model.forward_vessel(x, Tensor<float>::zeros(x.shape()), CascadeMode::kInfer, {}, &masked);
    for (float v : masked.values()) zero_ok = zero_ok && v == 0.0f;
    std::vector<float> hard(img.size());
    for (auto& v : hard) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    model.forward_vessel(x, Tensor<float>::from(x.shape(), hard), CascadeMode::kInfer, {}, &masked);
    for (std::size_t i = 0; i < img.size(); ++i) hard_ok = hard_ok && masked.values()[i] == img[i] * hard[i];
  }
  return {zero_ok && hard_ok, std::string("10 batches: zero region -> zero input ") + (zero_ok ? "exact" : "BROKEN") +
                                  ", hard mask -> image*mask " + (hard_ok ? "bit-exact" : "BROKEN")};
}

// ----------------------------------------------------------------- toy group

RunConfig toy_config() {
  RunConfig c;
  c.model.variant = variant_from_name("M*3");
  c.train.epochs = 40;
  c.train.weight_update_period = 10;
  c.train.seed = 0;
  c.data.synthetic_count = 200;
  c.validate();
  return c;
}

void toy_group(const fs::path& workdir) {
  const RunConfig cfg = toy_config();
  const DatasetSplit data = prepare_dataset(cfg);
  std::unique_ptr<Trainer<float>> trainer;

  run_criterion(6, "toy end-to-end (M*3, 200 synthetic 64x64, 40 epochs)", 900, [&]() -> Outcome {
    trainer = std::make_unique<Trainer<float>>(cfg, data, workdir.empty() ? fs::path{} : workdir / "toy");
    trainer->run();
    const auto metrics = evaluate_samples(trainer->model(), data.test, cfg.train.batch);
    const auto [r, v] = mean_dice(metrics);
    return {r >= 0.85 && v >= 0.80, std::to_string(metrics.size()) + " held-out samples, region Dice " + fmt(r) +
                                        " (>= 0.85), vessel Dice " + fmt(v) + " (>= 0.80)"};
  });

  run_criterion(8, "uncertainty localization (3 px contour band, Z=10)", 900, [&]() -> Outcome {
    if (!trainer) return {false, "no toy model"};
    const int n = 20;
    if (static_cast<int>(data.test.size()) < n) return {false, "fewer than 20 test samples"};
    std::vector<const Grid*> imgs;
    for (int i = 0; i < n; ++i) imgs.push_back(&data.test[i].image);
    PredictOptions opts;
    opts.mc_samples = 10;
    const auto preds = predict(trainer->model(), imgs, opts);
    int wins = 0;
    double band = 0, rest = 0;
    for (int i = 0; i < n; ++i) {
      const auto c = band_contrast(preds[i].region_variance, contour_band(data.test[i].region_mask, 3));
      wins += c.band_mean > c.elsewhere_mean;
      band += c.band_mean / n;
      rest += c.elsewhere_mean / n;
    }
    return {wins == n, std::to_string(wins) + "/" + std::to_string(n) + " samples with band > elsewhere; mean " +
                           fmt(band) + " vs " + fmt(rest)};
  });
}

// ------------------------------------------------------------ ablation group

constexpr int kAblationEpochs = 30;

void ablation_group(const fs::path& workdir) {
  run_criterion(7, "ablation direction (M*3 vs M0, 3 seeds)", 2700, [&]() -> Outcome {
    RunConfig base = toy_config();
    base.train.epochs = kAblationEpochs;
    AblationOptions opts;
    opts.variants = {"M0", "M*3"};
    opts.out_dir = workdir.empty() ? fs::path{} : workdir / "ablation";
    const auto res = run_ablation<float>(base, opts);
    auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    const double m0 = mean(res[0].seed_region_dice), full = mean(res[1].seed_region_dice);
    return {full >= m0 - 0.01, std::to_string(kAblationEpochs) + " epochs each, mean region Dice M*3 " + fmt(full) +
                                   " vs M0 " + fmt(m0) + " (margin 0.01)"};
  });
}

}  // namespace

int main(int argc, char** argv) {
  std::string group = "all";
  fs::path workdir;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--group" && i + 1 < argc) group = argv[++i];
    else if (a == "--workdir" && i + 1 < argc) workdir = argv[++i];
    else {
      std::cerr << "usage: acceptance [--group fast|toy|ablation|all] [--workdir DIR]\n";
      return 2;
    }
  }
  if (group != "fast" && group != "toy" && group != "ablation" && group != "all") {
    std::cerr << "unknown group '" << group << "'\n";
    return 2;
  }
  if (!workdir.empty()) fs::create_directories(workdir);

  if (group == "fast" || group == "all") {
    run_criterion(1, "MIGR algebraic invariants", 60, migr_invariants);
    run_criterion(2, "oracle equivalence", 120, oracle_equivalence);
    run_criterion(3, "residual-identity degeneracies", 120, degeneracies);
    run_criterion(4, "gradient checks", 300, gradient_checks);
    run_criterion(5, "loss-weight schedule fidelity", 120, schedule_fidelity);
    run_criterion(9, "metric suite", 60, metric_suite);
    run_criterion(10, "cascade contract", 60, cascade_contract);
  }
  if (group == "toy" || group == "all") toy_group(workdir);
  if (group == "ablation" || group == "all") ablation_group(workdir);
  return g_failures == 0 ? 0 : 1;
}
