#include <gtest/gtest.h>

#include <cmath>

#include "xpd/distill.hpp"
#include "xpd/gradcheck.hpp"

using namespace xpd;
using distill::Variant;

namespace {

ag::Var random_feature(const Shape& s, Rng& rng, bool grad = false) {
  Tensor t(s);
  for (double& v : t.values()) v = rng.uniform(-1, 1);
  return ag::Var(t, grad);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(Distill, VariantNames) {
  for (Variant v : {Variant::kNone, Variant::kPadNet, Variant::kXpd})
    EXPECT_EQ(distill::parse_variant(distill::variant_name(v)), v);
  EXPECT_THROW(distill::parse_variant("bogus"), ConfigError);
}

TEST(Distill, ZeroParamsGiveHalfAttention) {
  Rng rng(1);
  auto p = distill::DistillationParams::init(Variant::kXpd, 6, 8, rng);
  p.zero();
  const Tensor a = distill::attention_map(random_feature({2, 6, 5, 7}, rng), p).value();
  EXPECT_EQ(a.shape(), Shape({2, 8, 5, 7}));
  for (double v : a.values()) EXPECT_EQ(v, 0.5);
}

TEST(Distill, BiasOnlyAttention) {
  Rng rng(2);
  auto p = distill::DistillationParams::init(Variant::kPadNet, 3, 4, rng);
  const double b[4] = {-2.0, -0.5, 0.0, 1.5};
  for (int c = 0; c < 4; ++c) p.attention_bias.mutable_value()[c] = b[c];
  const Tensor a = distill::attention_map(ag::Var(Tensor({1, 3, 4, 4})), p).value();
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(a[c * 16 + i], sigmoid(b[c]));
}

TEST(Distill, ZeroFeatureKernelsGiveZeroMessage) {
  Rng rng(3);
  for (Variant v : {Variant::kPadNet, Variant::kXpd}) {
    auto p = distill::DistillationParams::init(v, 4, 8, rng);
    for (auto& w : p.feature_weights) w.mutable_value().fill(0.0);
    for (auto& b : p.feature_biases) b.mutable_value().fill(0.0);
    const Tensor m = distill::distill_message(random_feature({1, 4, 6, 6}, rng), p).value();
    EXPECT_EQ(m.shape(), Shape({1, 8, 6, 6}));
    EXPECT_EQ(m.max_abs(), 0.0);
  }
}

TEST(Distill, NoneIsZeroAndMergeIsIdentity) {
  Rng rng(4);
  auto p = distill::DistillationParams::init(Variant::kNone, 4, 6, rng);
  const ag::Var f = random_feature({2, 4, 5, 5}, rng), primary = random_feature({2, 6, 5, 5}, rng);
  const Tensor m = distill::distill_message(f, p).value();
  EXPECT_EQ(m.shape(), Shape({2, 6, 5, 5}));
  EXPECT_EQ(m.max_abs(), 0.0);
  const Tensor merged = distill::merge_message(primary, ag::Var(m)).value();
  for (int64_t i = 0; i < merged.numel(); ++i) EXPECT_EQ(merged[i], primary.value()[i]);
}

TEST(Distill, MergeIsSum) {
  Rng rng(5);
  const ag::Var a = random_feature({1, 3, 4, 4}, rng), zero(Tensor({1, 3, 4, 4}));
  EXPECT_EQ(distill::merge_message(a, zero).value().values()[7], a.value()[7]);
  EXPECT_EQ(distill::merge_message(zero, a).value().values()[9], a.value()[9]);
  EXPECT_THROW(distill::merge_message(a, ag::Var(Tensor({1, 2, 4, 4}))), ShapeError);
}

TEST(Distill, XpdStacksFourDilatedBranches) {
  Rng rng(6);
  auto p = distill::DistillationParams::init(Variant::kXpd, 5, 8, rng);
  ASSERT_EQ(p.feature_weights.size(), 4u);
  for (const auto& w : p.feature_weights) EXPECT_EQ(w.shape(), Shape({2, 5, 3, 3}));
  const ag::Var f = random_feature({1, 5, 14, 14}, rng);
  const Tensor stack = distill::feature_stack(f, p).value();
  // Each quarter of the stack equals its own dilated conv.
  for (int k = 0; k < 4; ++k) {
    const Tensor ref = kernels::ref::conv2d_forward(f.value(), p.feature_weights[k].value(),
                                                    &p.feature_biases[k].value(), {1, p.dilation_rates[k], p.dilation_rates[k]});
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 14 * 14; ++i) ASSERT_NEAR(stack[(k * 2 + c) * 196 + i], ref[c * 196 + i], 1e-12);
  }
  EXPECT_THROW(distill::DistillationParams::init(Variant::kXpd, 5, 6, rng), ConfigError);
}

TEST(Distill, DualBothNoneUnchanged) {
  Rng rng(7);
  auto s2d = distill::DistillationParams::init(Variant::kNone, 4, 6, rng);
  auto d2s = distill::DistillationParams::init(Variant::kNone, 6, 4, rng);
  const ag::Var seg = random_feature({1, 4, 5, 5}, rng), dep = random_feature({1, 6, 5, 5}, rng);
  const auto out = distill::dual_distill(seg, dep, s2d, d2s);
  EXPECT_EQ(out.seg.value(), seg.value());
  EXPECT_EQ(out.depth.value(), dep.value());
}

TEST(Distill, DualSwapSymmetry) {
  Rng rng(8);
  for (Variant v : {Variant::kPadNet, Variant::kXpd}) {
    auto s2d = distill::DistillationParams::init(v, 4, 8, rng);
    auto d2s = distill::DistillationParams::init(v, 8, 4, rng);
    const ag::Var seg = random_feature({2, 4, 6, 6}, rng), dep = random_feature({2, 8, 6, 6}, rng);
    const auto a = distill::dual_distill(seg, dep, s2d, d2s);
    const auto b = distill::dual_distill(dep, seg, d2s, s2d);
    EXPECT_EQ(a.seg.value(), b.depth.value());
    EXPECT_EQ(a.depth.value(), b.seg.value());
  }
}

TEST(Distill, ShapeAndChannelErrors) {
  Rng rng(9);
  auto p = distill::DistillationParams::init(Variant::kXpd, 4, 8, rng);
  EXPECT_THROW(distill::distill_message(random_feature({1, 3, 5, 5}, rng), p), ShapeError);
  EXPECT_THROW(distill::attention_map(random_feature({3, 5, 5}, rng), p), ShapeError);
}

TEST(Distill, GradientsPerVariant) {
  Rng rng(10);
  for (Variant v : {Variant::kPadNet, Variant::kXpd}) {
    auto p = distill::DistillationParams::init(v, 4, 4, rng);
    for (double& b : p.attention_bias.mutable_value().values()) b = rng.uniform(-0.5, 0.5);
    const ag::Var f = random_feature({1, 4, 13, 13}, rng, true);
    Tensor r({1, 4, 13, 13});
    for (double& x : r.values()) x = rng.uniform(-1, 1);
    std::vector<ag::Var> inputs{f};
    for (const auto& t : p.tensors()) inputs.push_back(t);
    const auto res = gradcheck::check_gradient(
        "msg", [&] { return ag::dot_const(distill::distill_message(f, p), r); }, inputs, gradcheck::kLocalTolerance);
    EXPECT_TRUE(res.passed) << distill::variant_name(v) << " " << res.max_rel_error;
  }
}
