#include <gtest/gtest.h>

#include <cmath>

#include "xpd/kernels.hpp"
#include "xpd/rng.hpp"
#include "xpd/tensor.hpp"

using namespace xpd;

namespace {

Tensor random_tensor(const Shape& s, Rng& rng) {
  Tensor t(s);
  for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

double max_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Tensor, ScalarAndShapes) {
  Tensor s(Shape{});
  EXPECT_EQ(s.numel(), 1);
  Tensor t({2, 3, 4, 5}, 1.5);
  EXPECT_EQ(t.numel(), 120);
  EXPECT_DOUBLE_EQ(t.sum(), 180.0);
  t.at(1, 2, 3, 4) = -7;
  EXPECT_DOUBLE_EQ(t[119], -7);
  EXPECT_DOUBLE_EQ(t.max_abs(), 7);
  EXPECT_THROW(t.reshaped({7}), ShapeError);
  EXPECT_EQ(t.reshaped({120}).numel(), 120);
}

TEST(Tensor, AxpyAndFinite) {
  Tensor a({3}, 1.0), b({3}, 2.0);
  a.axpy_(0.5, b);
  EXPECT_DOUBLE_EQ(a[0], 2.0);
  a.add_(b);
  EXPECT_DOUBLE_EQ(a[2], 4.0);
  EXPECT_TRUE(a.all_finite());
  a[1] = std::nan("");
  EXPECT_FALSE(a.all_finite());
  EXPECT_THROW(a.add_(Tensor({4})), ShapeError);
}

TEST(Conv, OutputSize) {
  EXPECT_EQ(kernels::conv_out_size(48, 3, {2, 1, 1}), 24);
  EXPECT_EQ(kernels::conv_out_size(14, 3, {1, 12, 12}), 14);
  EXPECT_EQ(kernels::conv_out_size(7, 1, {1, 0, 1}), 7);
}

TEST(Conv, HandComputedThreeByThree) {
  // All-ones 3x3 kernel over a 3x3 ramp with zero padding: centre output is
  // the sum of all inputs, corner is the sum of its 2x2 neighbourhood.
  Tensor in({1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) in[i] = i + 1;
  Tensor w({1, 1, 3, 3}, 1.0);
  Tensor out = kernels::omp::conv2d_forward(in, w, nullptr, {1, 1, 1});
  EXPECT_DOUBLE_EQ(out.at(0, 0, 1, 1), 45.0);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0, 0), 1 + 2 + 4 + 5);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 2, 2), 5 + 6 + 8 + 9);
}

struct ConvCase {
  int n, ci, co, h, w, k;
  kernels::ConvGeometry g;
};

class ConvParity : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvParity, ParallelMatchesReference) {
  const ConvCase c = GetParam();
  Rng rng(1234 + c.k * 7 + c.g.dilation);
  const Tensor in = random_tensor({c.n, c.ci, c.h, c.w}, rng);
  const Tensor w = random_tensor({c.co, c.ci, c.k, c.k}, rng);
  const Tensor b = random_tensor({c.co}, rng);
  const Tensor fo = kernels::omp::conv2d_forward(in, w, &b, c.g);
  const Tensor fr = kernels::ref::conv2d_forward(in, w, &b, c.g);
  EXPECT_LT(max_diff(fo, fr), 1e-12);

  const Tensor gout = random_tensor(fo.shape(), rng);
  const Tensor gio = kernels::omp::conv2d_backward_input(gout, w, in.shape(), c.g);
  const Tensor gir = kernels::ref::conv2d_backward_input(gout, w, in.shape(), c.g);
  EXPECT_LT(max_diff(gio, gir), 1e-12);

  Tensor gwo(w.shape()), gbo(b.shape()), gwr(w.shape()), gbr(b.shape());
  kernels::omp::conv2d_backward_params(gout, in, gwo, &gbo, c.g);
  kernels::ref::conv2d_backward_params(gout, in, gwr, &gbr, c.g);
  EXPECT_LT(max_diff(gwo, gwr), 1e-12);
  EXPECT_LT(max_diff(gbo, gbr), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Geometries, ConvParity,
                         ::testing::Values(ConvCase{2, 3, 4, 9, 11, 3, {1, 1, 1}}, ConvCase{1, 4, 2, 12, 10, 3, {2, 1, 1}},
                                           ConvCase{2, 2, 3, 8, 8, 1, {1, 0, 1}}, ConvCase{1, 3, 4, 14, 13, 3, {1, 6, 6}},
                                           ConvCase{1, 2, 2, 14, 14, 3, {1, 12, 12}},
                                           ConvCase{3, 5, 2, 7, 9, 3, {2, 1, 1}}));

TEST(Conv, AdjointIdentity) {
  // <conv(x), y> = <x, conv^T(y)> for the input adjoint.
  Rng rng(5);
  const kernels::ConvGeometry g{2, 1, 1};
  const Tensor x = random_tensor({1, 3, 10, 10}, rng), w = random_tensor({2, 3, 3, 3}, rng);
  const Tensor y = random_tensor(kernels::conv2d_output_shape(x, w, g), rng);
  const Tensor cx = kernels::omp::conv2d_forward(x, w, nullptr, g);
  const Tensor ty = kernels::omp::conv2d_backward_input(y, w, x.shape(), g);
  double lhs = 0, rhs = 0;
  for (int64_t i = 0; i < cx.numel(); ++i) lhs += cx[i] * y[i];
  for (int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * ty[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Conv, ShapeErrors) {
  Tensor in({1, 3, 8, 8}), w({2, 4, 3, 3});
  EXPECT_THROW(kernels::omp::conv2d_forward(in, w, nullptr, {1, 1, 1}), ShapeError);
}
