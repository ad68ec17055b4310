#include "xpd/kernels.hpp"

// Straightforward serial convolution: one tap at a time with explicit bounds
// checks. Slow, but obviously correct.
namespace xpd::kernels::ref {

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias,
                      const ConvGeometry& g) {
  Shape out_shape = conv2d_output_shape(input, weight, g);
  Tensor out(out_shape);
  const int64_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < out_shape[2]; ++oy)
        for (int64_t ox = 0; ox < out_shape[3]; ++ox) {
          double acc = bias ? (*bias)[co] : 0.0;
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t iy = oy * g.stride - g.padding + ky * g.dilation;
                const int64_t ix = ox * g.stride - g.padding + kx * g.dilation;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += weight.at(co, ci, ky, kx) * input.at(n, ci, iy, ix);
              }
          out.at(n, co, oy, ox) = acc;
        }
  return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             const ConvGeometry& g) {
  Tensor grad_in(input_shape);
  const int64_t batch = input_shape[0], cin = input_shape[1], h = input_shape[2], w = input_shape[3];
  const int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < grad_out.dim(2); ++oy)
        for (int64_t ox = 0; ox < grad_out.dim(3); ++ox) {
          const double go = grad_out.at(n, co, oy, ox);
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t iy = oy * g.stride - g.padding + ky * g.dilation;
                const int64_t ix = ox * g.stride - g.padding + kx * g.dilation;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                grad_in.at(n, ci, iy, ix) += weight.at(co, ci, ky, kx) * go;
              }
        }
  return grad_in;
}

void conv2d_backward_params(const Tensor& grad_out, const Tensor& input, Tensor& grad_weight,
                            Tensor* grad_bias, const ConvGeometry& g) {
  const int64_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t cout = grad_weight.dim(0), kh = grad_weight.dim(2), kw = grad_weight.dim(3);
  for (int64_t n = 0; n < batch; ++n)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oy = 0; oy < grad_out.dim(2); ++oy)
        for (int64_t ox = 0; ox < grad_out.dim(3); ++ox) {
          const double go = grad_out.at(n, co, oy, ox);
          if (grad_bias) (*grad_bias)[co] += go;
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t iy = oy * g.stride - g.padding + ky * g.dilation;
                const int64_t ix = ox * g.stride - g.padding + kx * g.dilation;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                grad_weight.at(co, ci, ky, kx) += input.at(n, ci, iy, ix) * go;
              }
        }
}

}  // namespace xpd::kernels::ref
