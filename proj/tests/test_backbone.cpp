#include <gtest/gtest.h>

#include <cmath>

#include "mtgnet/eval/gradcheck.hpp"
#include "mtgnet/model/mtgnet.hpp"

using namespace mtg;

namespace {

template <typename T>
Tensor<T> random_image(int n, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<T> v(static_cast<std::size_t>(n) * h * w);
  for (auto& x : v) x = static_cast<T>(rng.uniform());
  return Tensor<T>::from(Shape{n, 1, h, w}, v);
}

BackboneConfig narrow() {
  BackboneConfig cfg;
  cfg.base_channels = 2;
  cfg.routed_channels = 4;
  cfg.aux_decoder_width = 2;
  return cfg;
}

}  // namespace

TEST(Encoder, TapSizesAt64) {
  Rng rng(1);
  BackboneConfig cfg;
  Encoder<float> enc(cfg, rng);
  const auto taps = enc(random_image<float>(2, 64, 64, 1), {});
  for (int k = 0; k < 5; ++k) {
    EXPECT_EQ(taps[k].dim(0), 2);
    EXPECT_EQ(taps[k].dim(1), cfg.width(k + 1));
    EXPECT_EQ(taps[k].dim(2), 64 >> k);
    EXPECT_EQ(taps[k].dim(3), 64 >> k);
  }
  EXPECT_EQ(taps[4].dim(2), 4);
}

TEST(Encoder, L5At384Is24) {
  Rng rng(2);
  Encoder<float> enc(narrow(), rng);
  const auto taps = enc(random_image<float>(1, 384, 384, 2), {});
  EXPECT_EQ(taps[4].dim(2), 24);
  EXPECT_EQ(taps[4].dim(3), 24);
}

TEST(Encoder, StrideContractForValidSizes) {
  Rng rng(3);
  Encoder<float> enc(narrow(), rng);
  for (auto [h, w] : {std::pair{16, 16}, {32, 48}, {80, 16}}) {
    const auto taps = enc(random_image<float>(1, h, w, 3), {});
    for (int k = 0; k < 5; ++k) {
      EXPECT_EQ(taps[k].dim(2), (h + (1 << k) - 1) >> k);
      EXPECT_EQ(taps[k].dim(3), (w + (1 << k) - 1) >> k);
    }
  }
}

TEST(Encoder, IndivisibleSizeNamesDivisibility) {
  Rng rng(4);
  Encoder<float> enc(narrow(), rng);
  try {
    enc(random_image<float>(1, 40, 32, 4), {});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("divisible by 16"), std::string::npos);
  }
}

TEST(Encoder, DeterministicWithoutDropout) {
  Rng rng(5);
  Encoder<float> enc(BackboneConfig{}, rng);
  const auto img = Tensor<float>::zeros(Shape{1, 1, 32, 32});
  const auto a = enc(img, {}), b = enc(img, {});
  for (int k = 0; k < 5; ++k) EXPECT_EQ(a[k].values(), b[k].values());
  Rng r1(9), r2(9);
  nn::ForwardContext c1{true, false, 0.5, &r1}, c2{true, false, 0.5, &r2};
  Rng e1(5), e2(5);
  Encoder<float> x1(BackboneConfig{}, e1), x2(BackboneConfig{}, e2);
  EXPECT_EQ(x1(img, c1)[4].values(), x2(img, c2)[4].values());
}

TEST(Routing, ZeroTapsGiveBatchNormBias) {
  Rng rng(6);
  const auto cfg = narrow();
  FeatureRouting<double> routing(cfg, rng);
  nn::ParameterSet<double> ps;
  routing.collect(ps, "r");
  for (auto& p : ps.params)
    if (p.name.find(".beta") != std::string::npos)
      for (std::size_t i = 0; i < p.tensor.numel(); ++i) p.tensor.values()[i] = 0.1 * (i + 1);
  Taps<double> taps;
  for (int k = 0; k < 5; ++k) taps[k] = Tensor<double>::zeros(Shape{2, cfg.width(k + 1), 64 >> k, 64 >> k});
  const auto f = routing(taps, {});
  for (const auto* t : {&f.boundary, &f.shape, &f.region}) {
    EXPECT_EQ(t->dim(1), cfg.routed_channels);
    EXPECT_EQ(t->dim(2), 4);
    EXPECT_EQ(t->dim(3), 4);
    for (int s = 0; s < 2; ++s)
      for (int c = 0; c < cfg.routed_channels; ++c)
        for (int i = 0; i < 16; ++i) EXPECT_NEAR(t->values()[(s * cfg.routed_channels + c) * 16 + i], 0.1 * (c + 1), 1e-12);
  }
}

TEST(Routing, ConcatWidthsAndBatchMismatch) {
  Rng rng(7);
  const auto cfg = narrow();
  FeatureRouting<float> routing(cfg, rng);
  nn::ParameterSet<float> ps;
  routing.collect(ps, "r");
  for (const auto& p : ps.params) {
    if (p.name == "r.boundary.conv.weight") { EXPECT_EQ(p.tensor.dim(1), cfg.width(2) + cfg.width(3) + cfg.width(4)); }
    if (p.name == "r.shape.conv.weight") { EXPECT_EQ(p.tensor.dim(1), cfg.width(3) + cfg.width(4) + cfg.width(5)); }
    if (p.name == "r.region.conv.weight") { EXPECT_EQ(p.tensor.dim(1), cfg.width(5)); }
  }
  Taps<float> taps;
  for (int k = 0; k < 5; ++k) taps[k] = Tensor<float>::zeros(Shape{k == 2 ? 1 : 2, cfg.width(k + 1), 32 >> k, 32 >> k});
  EXPECT_THROW(routing(taps, {}), ShapeError);
}

TEST(Model, DecodersRestoreInputSize) {
  ModelConfig cfg;
  MtgNet<float> model(cfg, 1);
  const auto out = model.forward(random_image<float>(2, 32, 48, 8), CascadeMode::kInfer, {});
  for (const auto* t : {&out.region_logits, &out.boundary_logits, &out.shape_map, &out.vessel_logits})
    EXPECT_EQ(t->shape(), (Shape{2, 1, 32, 48}));
  for (double v : out.shape_map.values()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Model, RegionLogitsFiniteOver100Seeds) {
  ModelConfig cfg;
  cfg.backbone = narrow();
  cfg.graph.nodes = 3;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    MtgNet<float> model(cfg, seed);
    Rng drop(seed);
    nn::ForwardContext ctx{true, false, 0.5, &drop};
    const auto out = model.forward_region(random_image<float>(2, 16, 16, seed), ctx);
    ASSERT_TRUE(out.region_logits.all_finite()) << seed;
  }
}

TEST(Model, ToyParameterCountBelowTwoMillion) {
  MtgNet<float> model(ModelConfig{}, 1);
  EXPECT_LT(model.parameters().count(), 2'000'000u);
  EXPECT_GT(model.parameters().count(), 100'000u);
}

TEST(Model, EveryVariantBuildsAndRuns) {
  for (const auto& name : variant_names()) {
    ModelConfig cfg;
    cfg.backbone = narrow();
    cfg.graph.nodes = 2;
    cfg.variant = variant_from_name(name);
    MtgNet<float> model(cfg, 2);
    const auto out = model.forward(random_image<float>(1, 16, 16, 2), CascadeMode::kTrain, {});
    EXPECT_EQ(out.boundary_logits.defined(), cfg.variant.boundary_task) << name;
    EXPECT_EQ(out.shape_map.defined(), cfg.variant.shape_task) << name;
    EXPECT_EQ(out.heads.boundary.defined(), cfg.variant.graph) << name;
  }
  EXPECT_THROW(variant_from_name("M4"), ValidationError);
}

TEST(Model, InputGradientMatchesFiniteDifferences) {
  ModelConfig cfg;
  cfg.backbone = narrow();
  cfg.graph.nodes = 2;
  MtgNet<double> model(cfg, 3);
  // Frozen: batch norm on running statistics, no dropout.
  auto fn = [&](const std::vector<Tensor<double>>& x) { return ops::sum(model.forward_region(x[0], {}).region_logits); };
  const auto r = fd_gradient_check(fn, {random_image<double>(1, 16, 16, 3)}, 1e-3);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_index << " " << r.analytic << " " << r.numeric;
}

TEST(MaskImage, Examples) {
  const auto img = random_image<double>(1, 4, 4, 9);
  const Shape s = img.shape();
  EXPECT_EQ(mask_image(img, Tensor<double>::filled(s, 1.0), false).values(), img.values());
  for (double v : mask_image(img, Tensor<double>::zeros(s), true).values()) EXPECT_EQ(v, 0.0);
  for (double v : mask_image(Tensor<double>::filled(s, 0.8), Tensor<double>::filled(s, 0.5), false).values())
    EXPECT_DOUBLE_EQ(v, 0.4);
  EXPECT_THROW(mask_image(img, Tensor<double>::zeros(Shape{1, 1, 4, 5}), false), ShapeError);
}

TEST(MaskImage, HardMaskThresholdsAtHalf) {
  const auto img = random_image<double>(1, 1, 4, 10);
  const auto m = mask_image(img, Tensor<double>::from(img.shape(), {0.49, 0.5, 0.51, 0.0}), true);
  EXPECT_EQ(m.values()[0], 0.0);
  EXPECT_EQ(m.values()[1], img.values()[1]);
  EXPECT_EQ(m.values()[2], img.values()[2]);
  EXPECT_EQ(m.values()[3], 0.0);
}
