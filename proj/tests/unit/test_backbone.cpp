#include <gtest/gtest.h>

#include "dsfec/backbone.hpp"
#include "oracles.hpp"

using namespace dsfec;

namespace {

DSConvParams identity_dsconv(int c) {
  DSConvParams p;
  p.depthwise = {3, 3, c, 1, Padding::same, std::vector<float>(std::size_t(c) * 9, 0.0f), std::nullopt};
  for (int ch = 0; ch < c; ++ch) p.depthwise.weights[std::size_t(ch) * 9 + 4] = 1.0f;
  p.depthwise_bn = BatchNormParams::neutral(c, 0.0f);
  p.pointwise = {c, c, std::vector<float>(std::size_t(c) * c, 0.0f), std::nullopt};
  for (int ch = 0; ch < c; ++ch) p.pointwise.weights[std::size_t(ch) * c + ch] = 1.0f;
  p.pointwise_bn = p.depthwise_bn;
  return p;
}

DSConvParams random_dsconv(SplitMix64& rng, int cin, int cout) {
  DSConvParams p;
  p.depthwise = {3, 3, cin, 1, Padding::same, oracle::random_values(rng, std::size_t(cin) * 9), std::nullopt};
  p.depthwise_bn = BatchNormParams::neutral(cin, 0.0f);
  p.pointwise = {cin, cout, oracle::random_values(rng, std::size_t(cin) * cout), std::nullopt};
  p.pointwise_bn = BatchNormParams::neutral(cout, 0.0f);
  return p;
}

ConvSpec random_conv(SplitMix64& rng, int cin, int cout, int k) {
  return {k, k, cin, cout, 1, Padding::same, oracle::random_values(rng, std::size_t(cin) * cout * k * k), std::nullopt};
}

ResidualParams random_residual(SplitMix64& rng, int cin, int cout, bool projection) {
  ResidualParams p{random_conv(rng, cin, cout, 3), BatchNormParams::neutral(cout), random_conv(rng, cout, cout, 3),
                   BatchNormParams::neutral(cout), std::nullopt, std::nullopt};
  if (projection) {
    p.shortcut = random_conv(rng, cin, cout, 1);
    p.shortcut_bn = BatchNormParams::neutral(cout);
  }
  return p;
}

}  // namespace

TEST(DSConv, IdentityParamsGiveActivationOfInput) {
  SplitMix64 rng(31);
  const auto x = oracle::random_map(rng, 6, 5, 4);
  const auto act = Activation::leaky_relu(0.1f);
  EXPECT_EQ(dsconv_block_forward(x, identity_dsconv(4), 1, act), apply_activation(apply_activation(x, act), act));
  // relu is idempotent, so the two activations collapse
  EXPECT_EQ(dsconv_block_forward(x, identity_dsconv(4), 1, Activation::relu()), apply_activation(x, Activation::relu()));
}

TEST(DSConv, StrideTwoHalvesResolution) {
  SplitMix64 rng(32);
  const auto x = oracle::random_map(rng, 160, 160, 2);
  EXPECT_EQ(dsconv_block_forward(x, random_dsconv(rng, 2, 3), 2, Activation::relu()).shape_string(), "80x80x3");
}

TEST(DSConv, LinearModeEqualsComposedConv) {
  SplitMix64 rng(33);
  for (int t = 0; t < 10; ++t) {
    const int cin = 1 + int(rng.below(6)), cout = 1 + int(rng.below(6));
    const auto x = oracle::random_map(rng, 3 + int(rng.below(10)), 3 + int(rng.below(10)), cin);
    const auto p = random_dsconv(rng, cin, cout);
    ConvSpec full{3, 3, cin, cout, 1, Padding::same, std::vector<float>(std::size_t(cout) * cin * 9), std::nullopt};
    for (int co = 0; co < cout; ++co)
      for (int ci = 0; ci < cin; ++ci)
        for (int tap = 0; tap < 9; ++tap)
          full.weights[(std::size_t(co) * cin + ci) * 9 + tap] =
              p.pointwise.weights[std::size_t(co) * cin + ci] * p.depthwise.weights[std::size_t(ci) * 9 + tap];
    const auto got = dsconv_block_forward(x, p, 1, Activation::identity());
    const auto want = conv2d<double>(x, full);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
      num = std::max(num, std::fabs(double(got.data()[i]) - want.data()[i]));
      den = std::max(den, std::fabs(double(want.data()[i])));
    }
    EXPECT_LT(num / den, 1e-5);
  }
}

TEST(Residual, ZeroSecondConvGivesActivationOfInput) {
  SplitMix64 rng(34);
  const auto x = oracle::random_map(rng, 5, 5, 3);
  auto p = random_residual(rng, 3, 3, false);
  std::fill(p.conv2.weights.begin(), p.conv2.weights.end(), 0.0f);
  EXPECT_EQ(residual_block_forward(x, p, 1, Activation::relu()), apply_activation(x, Activation::relu()));
}

TEST(Residual, StrideTwoAndSkipMatters) {
  SplitMix64 rng(35);
  const auto x = oracle::random_map(rng, 8, 8, 3);
  const auto p = random_residual(rng, 3, 5, true);
  const auto y = residual_block_forward(x, p, 2, Activation::relu());
  EXPECT_EQ(y.shape_string(), "4x4x5");
  auto no_skip = p;
  std::fill(no_skip.shortcut->weights.begin(), no_skip.shortcut->weights.end(), 0.0f);
  EXPECT_NE(residual_block_forward(x, no_skip, 2, Activation::relu()), y);
}

TEST(Residual, ShapeChangeWithoutProjectionThrows) {
  SplitMix64 rng(36);
  const auto p = random_residual(rng, 3, 5, false);
  EXPECT_THROW(residual_block_forward(oracle::random_map(rng, 4, 4, 3), p, 1, Activation::relu()), ConfigError);
}

TEST(Bottleneck, MatchesManualComposition) {
  SplitMix64 rng(37);
  const auto x = oracle::random_map(rng, 6, 6, 8);
  BottleneckParams p{{8, 2, oracle::random_values(rng, 16), std::nullopt}, BatchNormParams::neutral(2),
                     random_conv(rng, 2, 2, 3), BatchNormParams::neutral(2),
                     {2, 8, oracle::random_values(rng, 16), std::nullopt}, BatchNormParams::neutral(8),
                     std::nullopt, std::nullopt};
  const auto act = Activation::relu();
  auto h = apply_activation(batch_norm_infer(pointwise_conv2d(x, p.reduce), p.reduce_bn), act);
  h = apply_activation(batch_norm_infer(conv2d(h, p.conv), p.conv_bn), act);
  h = batch_norm_infer(pointwise_conv2d(h, p.expand), p.expand_bn);
  const auto want = apply_activation(add(h, x), act);
  const auto got = bottleneck_block_forward(x, p, 1, act);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-4);
}

TEST(Backbone, StageShapesForDsfecS) {
  const auto cfg = preset("dsfec-s");
  const auto g = build_graph(cfg);
  const auto w = init_weights(g, 5);
  SplitMix64 rng(38);
  const auto img = oracle::random_map(rng, 160, 160, 12, 0.0, 1.0);
  const auto stages = backbone_forward(img, g, w);
  const char* want[] = {"80x80x128", "40x40x128", "20x20x128", "10x10x256"};
  for (int s = 0; s < 4; ++s) EXPECT_EQ(stages[s].shape_string(), want[s]);
  EXPECT_EQ(backbone_forward(img, g, w)[3], stages[3]);
}

TEST(Backbone, ZeroInputGivesZeroStages) {
  const auto g = build_graph(preset("dsfec-s"));
  const auto w = init_weights(g, 6);
  for (const auto& s : backbone_forward(FeatureMap(160, 160, 12), g, w))
    for (float v : s.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Backbone, InterpreterMatchesBlockForwards) {
  ModelConfig cfg = preset("dsfec-s");
  cfg.grid.x_max = 8;
  cfg.grid.y_min = -4;
  cfg.grid.y_max = 4;
  const auto g = build_graph(cfg);
  const auto w = init_weights(g, 7);
  SplitMix64 rng(39);
  const auto img = oracle::random_map(rng, 16, 16, 12);
  const auto stages = backbone_forward(img, g, w);
  const auto& stem = detail::node_named(g, "stem.conv");
  auto x = apply_activation(batch_norm_infer(conv2d(img, conv_spec(stem, w)), bn_params(detail::node_named(g, "stem.bn"), w)),
                            cfg.activations.stem);
  x = dsconv_block_forward(x, dsconv_params(g, w, "stage1.block0"), 2, cfg.activations.backbone);
  EXPECT_EQ(x, stages[0]);

  ModelConfig base = preset("baseline");
  base.grid = cfg.grid;
  const auto gb = build_graph(base);
  const auto wb = init_weights(gb, 8);
  const auto img32 = oracle::random_map(rng, 16, 16, 32);
  const auto sb = backbone_forward(img32, gb, wb);
  FeatureMap y = img32;
  for (int i = 1; i <= 2; ++i) {
    const auto s = std::to_string(i);
    y = apply_activation(batch_norm_infer(conv2d(y, conv_spec(detail::node_named(gb, "stem.conv" + s), wb)),
                                          bn_params(detail::node_named(gb, "stem.bn" + s), wb)),
                         base.activations.stem);
  }
  for (int j = 0; j < 3; ++j)
    y = bottleneck_block_forward(y, bottleneck_params(gb, wb, "stage1.block" + std::to_string(j)), j == 0 ? 2 : 1,
                                 base.activations.backbone);
  EXPECT_EQ(y, sb[0]);
}

TEST(Backbone, MissingWeightsListNodes) {
  const auto g = build_graph(preset("dsfec-s"));
  auto w = init_weights(g, 9);
  WeightStore partial;
  for (const auto& [name, t] : w.tensors())
    if (name.rfind("stage2.block0.pw", 0) != 0) partial.set(name, t);
  try {
    backbone_forward(FeatureMap(160, 160, 12), g, partial);
    FAIL() << "expected WeightError";
  } catch (const WeightError& e) {
    EXPECT_NE(std::string(e.what()).find("stage2.block0.pw"), std::string::npos);
  }
  EXPECT_THROW(backbone_forward(FeatureMap(160, 160, 8), g, w), ConfigError);
}
