#include <algorithm>

#include "xpd/kernels.hpp"

namespace xpd::kernels {

Shape conv2d_output_shape(const Tensor& input, const Tensor& weight, const ConvGeometry& g) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (g.stride < 1 || g.dilation < 1 || g.padding < 0)
    throw ConfigError("conv2d: invalid stride/dilation/padding");
  if (input.dim(1) != weight.dim(1))
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) +
                     " channels, weight expects " + std::to_string(weight.dim(1)));
  const int64_t ho = conv_out_size(input.dim(2), weight.dim(2), g);
  const int64_t wo = conv_out_size(input.dim(3), weight.dim(3), g);
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output for input " + shape_str(input.shape()));
  return {input.dim(0), weight.dim(0), ho, wo};
}

namespace {

// Range [lo, hi) of output columns whose tap lands inside [0, in_w).
inline void valid_range(int64_t out_w, int64_t in_w, int64_t offset, int stride, int64_t& lo,
                        int64_t& hi) {
  // iw = ow * stride + offset must satisfy 0 <= iw < in_w.
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const int64_t last = in_w - 1 - offset;
  hi = last < 0 ? 0 : std::min<int64_t>(out_w, last / stride + 1);
  if (hi < lo) hi = lo;
}

}  // namespace

namespace omp {

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias,
                      const ConvGeometry& g) {
  Shape out_shape = conv2d_output_shape(input, weight, g);
  if (bias && (bias->rank() != 1 || bias->dim(0) != weight.dim(0)))
    throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()));
  Tensor out(out_shape);
  const int64_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const int64_t ho = out_shape[2], wo = out_shape[3];
  const double* in = input.data();
  const double* wt = weight.data();
  double* o = out.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < batch; ++n) {
    for (int64_t co = 0; co < cout; ++co) {
      double* op = o + (n * cout + co) * ho * wo;
      const double b = bias ? (*bias)[co] : 0.0;
      std::fill(op, op + ho * wo, b);
      for (int64_t ci = 0; ci < cin; ++ci) {
        const double* ip = in + (n * cin + ci) * h * w;
        const double* wp = wt + (co * cin + ci) * kh * kw;
        for (int64_t ky = 0; ky < kh; ++ky) {
          for (int64_t kx = 0; kx < kw; ++kx) {
            const double wv = wp[ky * kw + kx];
            const int64_t off_x = kx * g.dilation - g.padding;
            int64_t lo, hi;
            valid_range(wo, w, off_x, g.stride, lo, hi);
            for (int64_t oy = 0; oy < ho; ++oy) {
              const int64_t iy = oy * g.stride - g.padding + ky * g.dilation;
              if (iy < 0 || iy >= h) continue;
              const double* irow = ip + iy * w + off_x;
              double* orow = op + oy * wo;
              if (g.stride == 1) {
                for (int64_t ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox];
              } else {
                for (int64_t ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[ox * g.stride];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             const ConvGeometry& g) {
  Tensor grad_in(input_shape);
  const int64_t batch = input_shape[0], cin = input_shape[1], h = input_shape[2], w = input_shape[3];
  const int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const int64_t ho = grad_out.dim(2), wo = grad_out.dim(3);
  const double* go = grad_out.data();
  const double* wt = weight.data();
  double* gi = grad_in.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < batch; ++n) {
    for (int64_t ci = 0; ci < cin; ++ci) {
      double* gp = gi + (n * cin + ci) * h * w;
      for (int64_t co = 0; co < cout; ++co) {
        const double* gop = go + (n * cout + co) * ho * wo;
        const double* wp = wt + (co * cin + ci) * kh * kw;
        for (int64_t ky = 0; ky < kh; ++ky) {
          for (int64_t kx = 0; kx < kw; ++kx) {
            const double wv = wp[ky * kw + kx];
            const int64_t off_x = kx * g.dilation - g.padding;
            int64_t lo, hi;
            valid_range(wo, w, off_x, g.stride, lo, hi);
            for (int64_t oy = 0; oy < ho; ++oy) {
              const int64_t iy = oy * g.stride - g.padding + ky * g.dilation;
              if (iy < 0 || iy >= h) continue;
              double* grow = gp + iy * w + off_x;
              const double* orow = gop + oy * wo;
              if (g.stride == 1) {
                for (int64_t ox = lo; ox < hi; ++ox) grow[ox] += wv * orow[ox];
              } else {
                for (int64_t ox = lo; ox < hi; ++ox) grow[ox * g.stride] += wv * orow[ox];
              }
            }
          }
        }
      }
    }
  }
  return grad_in;
}

void conv2d_backward_params(const Tensor& grad_out, const Tensor& input, Tensor& grad_weight,
                            Tensor* grad_bias, const ConvGeometry& g) {
  const int64_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t cout = grad_weight.dim(0), kh = grad_weight.dim(2), kw = grad_weight.dim(3);
  const int64_t ho = grad_out.dim(2), wo = grad_out.dim(3);
  const double* go = grad_out.data();
  const double* in = input.data();
  double* gw = grad_weight.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < cout; ++co) {
    for (int64_t ci = 0; ci < cin; ++ci) {
      for (int64_t ky = 0; ky < kh; ++ky) {
        for (int64_t kx = 0; kx < kw; ++kx) {
          const int64_t off_x = kx * g.dilation - g.padding;
          int64_t lo, hi;
          valid_range(wo, w, off_x, g.stride, lo, hi);
          double acc = 0.0;
          for (int64_t n = 0; n < batch; ++n) {
            const double* gop = go + (n * cout + co) * ho * wo;
            const double* ip = in + (n * cin + ci) * h * w;
            for (int64_t oy = 0; oy < ho; ++oy) {
              const int64_t iy = oy * g.stride - g.padding + ky * g.dilation;
              if (iy < 0 || iy >= h) continue;
              const double* irow = ip + iy * w + off_x;
              const double* orow = gop + oy * wo;
              if (g.stride == 1) {
                for (int64_t ox = lo; ox < hi; ++ox) acc += orow[ox] * irow[ox];
              } else {
                for (int64_t ox = lo; ox < hi; ++ox) acc += orow[ox] * irow[ox * g.stride];
              }
            }
          }
          gw[((co * cin + ci) * kh + ky) * kw + kx] += acc;
        }
      }
    }
  }

  if (grad_bias) {
    for (int64_t co = 0; co < cout; ++co) {
      double acc = 0.0;
      for (int64_t n = 0; n < batch; ++n) {
        const double* gop = go + (n * cout + co) * ho * wo;
        for (int64_t i = 0; i < ho * wo; ++i) acc += gop[i];
      }
      (*grad_bias)[co] += acc;
    }
  }
}

}  // namespace omp
}  // namespace xpd::kernels
