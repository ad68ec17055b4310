#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "xpd/gradcheck.hpp"
#include "xpd/losses.hpp"

using namespace xpd;
using losses::BoundaryLoss;

namespace {

// Independent re-statement of the weighting pipeline: replicate padding,
// |Sobel_x| + |Sobel_y|, 3x3 population std, max over GT-boundary pixels.
struct Oracle {
  static double at(const RealMap& m, int r, int c) {
    return m(std::clamp(r, 0, m.rows() - 1), std::clamp(c, 0, m.cols() - 1));
  }
  static RealMap boundary(const RealMap& m) {
    RealMap b(m.rows(), m.cols());
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) {
        const double l = at(m, r - 1, c) + at(m, r + 1, c) + at(m, r, c - 1) + at(m, r, c + 1) - 4 * m(r, c);
        b(r, c) = std::min(std::abs(l), 1.0);
      }
    return b;
  }
  static RealMap weights(const RealMap& gt, const DepthMap& d, bool band_only) {
    const int H = d.rows(), W = d.cols();
    RealMap g(H, W);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        const double gx = (at(d, r - 1, c + 1) + 2 * at(d, r, c + 1) + at(d, r + 1, c + 1)) -
                          (at(d, r - 1, c - 1) + 2 * at(d, r, c - 1) + at(d, r + 1, c - 1));
        const double gy = (at(d, r + 1, c - 1) + 2 * at(d, r + 1, c) + at(d, r + 1, c + 1)) -
                          (at(d, r - 1, c - 1) + 2 * at(d, r - 1, c) + at(d, r - 1, c + 1));
        g(r, c) = std::abs(gx) + std::abs(gy);
      }
    RealMap s(H, W);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        double sum = 0, sq = 0;
        for (int i = -1; i <= 1; ++i)
          for (int j = -1; j <= 1; ++j) sum += at(g, r + i, c + j);
        const double mean = sum / 9;
        for (int i = -1; i <= 1; ++i)
          for (int j = -1; j <= 1; ++j) sq += std::pow(at(g, r + i, c + j) - mean, 2);
        s(r, c) = std::sqrt(sq / 9);
      }
    const RealMap bgt = boundary(gt);
    double m = 0;
    for (size_t i = 0; i < s.size(); ++i)
      if (bgt[i] > 0) m = std::max(m, s[i]);
    RealMap w(H, W);
    if (m == 0) return w;
    for (size_t i = 0; i < s.size(); ++i) {
      if (band_only)
        w[i] = bgt[i] > 0 ? s[i] / (m + 1e-8) : 0.0;
      else
        w[i] = std::clamp(s[i] / (m + 1e-8), 0.0, 1.0);
    }
    return w;
  }
};

Tensor as_tensor(const RealMap& m) {
  Tensor t({1, m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), t.data());
  return t;
}

RealMap half_mask(int h, int w, int split) {
  RealMap m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < split; ++c) m(r, c) = 1.0;
  return m;
}

}  // namespace

TEST(Losses, BoundaryNames) {
  for (auto b : {BoundaryLoss::kOff, BoundaryLoss::kVanilla, BoundaryLoss::kDgbpl})
    EXPECT_EQ(losses::parse_boundary_loss(losses::boundary_loss_name(b)), b);
  EXPECT_THROW(losses::parse_boundary_loss("edge"), ConfigError);
}

TEST(Losses, DicePerfectMaskIsZero) {
  Tensor q({2, 4, 4});
  for (int i = 0; i < 32; i += 3) q[i] = 1.0;
  EXPECT_NEAR(ag::dice_loss(ag::constant(q), q).value()[0], 0.0, 1e-15);
}

TEST(Losses, VanillaEqualsBoundaryCountOverN) {
  const RealMap gt = half_mask(8, 10, 3);
  Tensor pr({1, 8, 10});
  pr.fill(0.37);  // constant prediction has no boundary
  const double v = losses::vanilla_boundary_loss(as_tensor(gt), ag::Var(pr)).value()[0];
  int count = 0;
  for (double b : Oracle::boundary(gt).values()) count += b == 1.0;
  EXPECT_EQ(count, 16);
  EXPECT_DOUBLE_EQ(v, count / 80.0);
  EXPECT_EQ(losses::vanilla_boundary_loss(as_tensor(gt), ag::constant(as_tensor(gt))).value()[0], 0.0);
}

TEST(Losses, DgbplMatchesHandPipeline) {
  // 8x8: GT left half; depth has a step at the true edge plus a slanted plane.
  const RealMap gt = half_mask(8, 8, 4);
  DepthMap d(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) d(r, c) = 1.0 + 0.05 * r * c + (c >= 5 ? 0.5 : 0.0);
  Rng rng(3);
  Tensor pr({1, 8, 8});
  for (double& v : pr.values()) v = rng.uniform(0.05, 0.95);
  for (bool band : {false, true}) {
    const RealMap w = Oracle::weights(gt, d, band);
    const RealMap bgt = Oracle::boundary(gt);
    RealMap prm(8, 8);
    std::copy(pr.values().begin(), pr.values().end(), prm.storage().begin());
    const RealMap bpr = Oracle::boundary(prm);
    for (bool sq : {true, false}) {
      double expect = 0;
      for (int i = 0; i < 64; ++i) expect += std::pow(w[i], sq ? 2 : 1) * std::pow(bgt[i] - bpr[i], 2);
      expect /= 64;
      const auto mode = band ? raster::WeightMode::kGtBandOnly : raster::WeightMode::kFullField;
      const double got = losses::dgbpl(gt, ag::Var(pr), d, mode, sq).value()[0];
      EXPECT_NEAR(got, expect, 1e-10) << band << sq;
      EXPECT_GT(got, 0.0);
    }
  }
}

TEST(Losses, DgbplZeroCases) {
  const RealMap gt = half_mask(8, 8, 4);
  DepthMap step(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) step(r, c) = c < 4 ? 1.0 : 2.0;
  EXPECT_EQ(losses::dgbpl(gt, ag::constant(as_tensor(gt)), step).value()[0], 0.0);
  // Flat depth: every std is 0, so W is 0 and any prediction costs nothing.
  Tensor pr({1, 8, 8});
  Rng rng(4);
  for (double& v : pr.values()) v = rng.uniform();
  EXPECT_EQ(losses::dgbpl(gt, ag::Var(pr), DepthMap(8, 8, 2.0), raster::WeightMode::kGtBandOnly).value()[0], 0.0);
  EXPECT_EQ(losses::dgbpl(gt, ag::Var(pr), DepthMap(8, 8, 2.0)).value()[0], 0.0);
}

TEST(Losses, DgbplDominatedByVanilla) {
  SCOPED_TRACE("per-pixel W^2 (a-b)^2 <= (a-b)^2 whenever W <= 1");
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    RealMap gt(10, 10);
    for (int r = 2; r < 2 + rng.uniform_int(3, 7); ++r)
      for (int c = 1; c < 1 + rng.uniform_int(3, 8); ++c) gt(r, c) = 1.0;
    DepthMap d(10, 10);
    for (double& v : d.storage()) v = rng.uniform(1, 3);
    Tensor pr({1, 10, 10});
    for (double& v : pr.values()) v = rng.uniform();
    const double dg = losses::dgbpl(gt, ag::Var(pr), d).value()[0];
    const double va = losses::vanilla_boundary_loss(as_tensor(gt), ag::Var(pr)).value()[0];
    EXPECT_GE(dg, 0.0);
    EXPECT_LE(dg, va + 1e-15);
  }
}

TEST(Losses, DgbplGradient) {
  const RealMap gt = half_mask(8, 8, 4);
  DepthMap d(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) d(r, c) = 1.0 + 0.05 * r * c + (c >= 5 ? 0.5 : 0.0);
  Rng rng(6);
  Tensor z({1, 8, 8});
  for (double& v : z.values()) v = rng.uniform(-1.5, 1.5);
  ag::Var logits(z, true);
  const auto r = gradcheck::check_gradient(
      "dgbpl", [&] { return losses::dgbpl(gt, ag::sigmoid(logits), d); }, {logits}, gradcheck::kLocalTolerance);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Losses, WeightsShapeMismatch) {
  EXPECT_THROW(losses::dgbpl_weights(RealMap(4, 4), DepthMap(4, 5, 1.0), raster::WeightMode::kFullField), ShapeError);
  EXPECT_THROW(losses::dgbpl(as_tensor(RealMap(4, 4)), ag::Var(Tensor({1, 4, 4})), {}), ShapeError);
}

TEST(Losses, CompositeArithmetic) {
  losses::LossConfig cfg;
  losses::LossTerms zero{ag::scalar(0), ag::scalar(0), ag::scalar(0), ag::scalar(0), ag::scalar(0)};
  EXPECT_EQ(losses::composite_loss(zero, cfg).breakdown.total, 0.0);
  losses::LossTerms t{ag::scalar(1), ag::scalar(2), ag::scalar(3), ag::scalar(4), ag::scalar(0)};
  const auto r = losses::composite_loss(t, cfg);
  EXPECT_EQ(r.breakdown.total, 10.0);
  EXPECT_EQ(r.breakdown.boundary, 4.0);
  cfg.w_boundary = 0.5;
  cfg.w_focal = 3;
  EXPECT_EQ(losses::composite_loss(t, cfg).breakdown.total, 3.0 + 2.0 + 3.0 + 2.0);
}

TEST(Losses, CompositeGradientIsWeightedSum) {
  Rng rng(7);
  Tensor xv({3});
  for (double& v : xv.values()) v = rng.uniform(0.5, 1.5);
  ag::Var x(xv, true);
  losses::LossConfig cfg;
  cfg.w_focal = 0.3, cfg.w_dice = 2.0, cfg.w_rmse = 0.7, cfg.w_boundary = 1.5, cfg.w_constraints = 0.25;
  auto f = [&] {
    losses::LossTerms t;
    t.focal = ag::sum_all(ag::mul(x, x));
    t.dice = ag::sum_all(ag::sigmoid(x));
    t.rmse = ag::mean_all(ag::softplus(x));
    t.boundary = ag::sum_all(ag::scale(x, 3.0));
    t.constraints = ag::sum_all(ag::mul(x, ag::mul(x, x)));
    return losses::composite_loss(t, cfg).total;
  };
  EXPECT_TRUE(gradcheck::check_gradient("composite", f, {x}, gradcheck::kLocalTolerance).passed);
  x.zero_grad();
  ag::backward(f());
  for (int i = 0; i < 3; ++i) {
    const double v = xv[i], s = 1 / (1 + std::exp(-v));
    const double expect = 0.3 * 2 * v + 2.0 * s * (1 - s) + 0.7 * s / 3 + 1.5 * 3 + 0.25 * 3 * v * v;
    EXPECT_NEAR(x.grad()[i], expect, 1e-12);
  }
}

TEST(Losses, ConfigJsonStrict) {
  losses::LossConfig c;
  c.boundary = BoundaryLoss::kVanilla;
  c.w_squared = false;
  EXPECT_EQ(losses::LossConfig::from_json(c.to_json()).to_json(), c.to_json());
  auto j = c.to_json();
  j["w_typo"] = 1;
  EXPECT_THROW(losses::LossConfig::from_json(j), ConfigError);
  c.w_dice = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}
