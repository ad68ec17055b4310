#include <gtest/gtest.h>

#include <cmath>

#include "xpd/autograd.hpp"
#include "xpd/gradcheck.hpp"
#include "xpd/rng.hpp"

using namespace xpd;

namespace {

Tensor rnd(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(s);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

ag::Var leaf(const Shape& s, Rng& rng, double lo = -1, double hi = 1) { return ag::Var(rnd(s, rng, lo, hi), true); }

void expect_grad_ok(const std::string& name, const std::function<ag::Var()>& f, const std::vector<ag::Var>& in) {
  gradcheck::ProbeOptions po;
  po.per_input = 12;
  const auto r = gradcheck::check_gradient(name, f, in, 1e-6, po);
  EXPECT_TRUE(r.passed) << name << " rel err " << r.max_rel_error;
}

}  // namespace

TEST(Autograd, ElementwiseGradients) {
  Rng rng(1);
  ag::Var a = leaf({2, 3}, rng), b = leaf({2, 3}, rng, 0.2, 1.0);
  const Tensor R = rnd({2, 3}, rng);
  expect_grad_ok("add", [&] { return ag::dot_const(ag::add(a, b), R); }, {a, b});
  expect_grad_ok("sub", [&] { return ag::dot_const(ag::sub(a, b), R); }, {a, b});
  expect_grad_ok("mul", [&] { return ag::dot_const(ag::mul(a, b), R); }, {a, b});
  expect_grad_ok("scale", [&] { return ag::dot_const(ag::scale(ag::add_const(a, 0.3), -2.5), R); }, {a});
  expect_grad_ok("sigmoid", [&] { return ag::dot_const(ag::sigmoid(a), R); }, {a});
  expect_grad_ok("softplus", [&] { return ag::dot_const(ag::softplus(a), R); }, {a});
  expect_grad_ok("relu", [&] { return ag::dot_const(ag::relu(a), R); }, {a});
  expect_grad_ok("mean", [&] { return ag::mean_all(ag::mul(a, a)); }, {a});
}

TEST(Autograd, FeatureOpGradients) {
  Rng rng(2);
  ag::Var x = leaf({2, 4, 5, 6}, rng);
  ag::Var g = leaf({4}, rng, 0.5, 1.5), b = leaf({4}, rng);
  const Tensor R = rnd({2, 4, 5, 6}, rng);
  expect_grad_ok("group_norm", [&] { return ag::dot_const(ag::group_norm(x, g, b, 2), R); }, {x, g, b});
  const Tensor R2 = rnd({2, 4, 10, 12}, rng);
  expect_grad_ok("upsample_nearest", [&] { return ag::dot_const(ag::upsample_nearest(x, 2), R2); }, {x});
  const Tensor R4 = rnd({2, 4, 20, 24}, rng);
  expect_grad_ok("upsample_bilinear", [&] { return ag::dot_const(ag::upsample_bilinear(x, 4), R4); }, {x});
  ag::Var y = leaf({2, 2, 5, 6}, rng);
  const Tensor Rc = rnd({2, 6, 5, 6}, rng);
  expect_grad_ok("concat", [&] { return ag::dot_const(ag::concat_channels({x, y}), Rc); }, {x, y});
  expect_grad_ok("append_coords", [&] { return ag::dot_const(ag::append_coords(x), Rc); }, {x});
  ag::Var w = leaf({3, 4, 3, 3}, rng), bias = leaf({3}, rng);
  const Tensor Rv = rnd({2, 3, 3, 3}, rng);
  expect_grad_ok("conv2d", [&] { return ag::dot_const(ag::conv2d(x, w, &bias, {2, 1, 1}), Rv); }, {x, w, bias});
}

TEST(Autograd, DynamicMaskGradient) {
  Rng rng(3);
  ag::Var k = leaf({2, 4, 3, 3}, rng), f = leaf({2, 4, 6, 6}, rng);
  const std::vector<ag::CellRef> cells{{0, 0, 0}, {1, 2, 1}, {0, 0, 0}};
  const Tensor R = rnd({3, 6, 6}, rng);
  expect_grad_ok("dynamic_masks", [&] { return ag::dot_const(ag::dynamic_masks(k, f, cells), R); }, {k, f});
  const Tensor m = ag::dynamic_masks(k, f, cells).value();
  double manual = 0;
  for (int e = 0; e < 4; ++e) manual += k.value().at(1, e, 2, 1) * f.value().at(1, e, 4, 5);
  EXPECT_NEAR(m[1 * 36 + 4 * 6 + 5], manual, 1e-14);
}

TEST(Autograd, LossOpGradients) {
  Rng rng(4);
  ag::Var z = leaf({1, 1, 4, 4}, rng, -2, 2);
  Tensor t({1, 1, 4, 4});
  t[3] = t[10] = 1;
  expect_grad_ok("focal", [&] { return ag::focal_loss(z, t, 0.25, 2.0, 2.0); }, {z});
  ag::Var p = leaf({2, 5, 5}, rng, -2, 2);
  Tensor q({2, 5, 5});
  for (int i = 0; i < 25; ++i) q[i] = i % 5 < 2;
  expect_grad_ok("dice", [&] { return ag::dice_loss(ag::sigmoid(p), q); }, {p});
  ag::Var d = leaf({1, 1, 3, 3}, rng, 1, 2);
  const Tensor dg = rnd({1, 1, 3, 3}, rng, 1, 2);
  Tensor valid({1, 1, 3, 3}, 1.0);
  valid[4] = 0;
  expect_grad_ok("rmse", [&] { return ag::rmse_loss(d, dg, valid); }, {d});
  const Tensor Rb = rnd({2, 5, 5}, rng);
  expect_grad_ok("laplacian_boundary", [&] { return ag::dot_const(ag::laplacian_boundary(ag::sigmoid(p)), Rb); }, {p});
}

TEST(Autograd, FocalClosedForm) {
  // One positive cell at p = 0.5: -alpha (1 - p)^gamma ln p.
  Tensor t({1, 1, 1, 1}, 1.0);
  const double v = ag::focal_loss(ag::constant(Tensor({1, 1, 1, 1})), t, 0.25, 2.0, 1.0).value()[0];
  EXPECT_NEAR(v, -0.25 * 0.25 * std::log(0.5), 1e-15);
  EXPECT_NEAR(v, 0.04332, 1e-5);
}

TEST(Autograd, RmseZeroAtMatchAndNoValid) {
  Tensor g({1, 1, 2, 2}, 2.0);
  ag::Var d(g, true);
  ag::Var r = ag::rmse_loss(d, g, Tensor({1, 1, 2, 2}, 1.0));
  EXPECT_EQ(r.value()[0], 0.0);
  ag::backward(r);
  EXPECT_EQ(d.grad().max_abs(), 0.0);
  EXPECT_EQ(ag::rmse_loss(d, g, Tensor({1, 1, 2, 2})).value()[0], 0.0);
}

TEST(Autograd, SharedNodeAccumulates) {
  ag::Var x(Tensor({1}, 3.0), true);
  ag::Var y = ag::add(ag::mul(x, x), x);  // x^2 + x
  ag::backward(ag::sum_all(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  ag::Var x(Tensor({2}, 1.0), true);
  {
    ag::NoGradGuard guard;
    EXPECT_FALSE(ag::grad_enabled());
    ag::Var y = ag::mul(x, x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(ag::grad_enabled());
  EXPECT_TRUE(ag::mul(x, x).requires_grad());
}

TEST(Autograd, UntouchedLeafHasZeroGrad) {
  ag::Var x(Tensor({2}, 1.0), true), unused(Tensor({3}, 1.0), true);
  ag::backward(ag::sum_all(x));
  EXPECT_EQ(unused.grad().shape(), Shape({3}));
  EXPECT_EQ(unused.grad().max_abs(), 0.0);
}

TEST(Autograd, BilinearPreservesConstants) {
  ag::Var x(Tensor({1, 2, 3, 4}, 0.7), false);
  const Tensor up = ag::upsample_bilinear(x, 4).value();
  for (double v : up.values()) EXPECT_NEAR(v, 0.7, 1e-15);
}
