#pragma once

#include "xpd/tensor.hpp"

// Dense 2-D convolution kernels. Two implementations share one contract:
//
//   xpd::kernels::omp  - OpenMP-parallel, used by the network.
//   xpd::kernels::ref  - plain serial loops, kept as the test oracle and the
//                        benchmark baseline.
//
// Every output element is owned by exactly one loop iteration in the parallel
// versions, so results do not depend on the thread count.
namespace xpd::kernels {

struct ConvGeometry {
  int stride = 1;
  int padding = 0;  // zero padding, same on all sides
  int dilation = 1;
};

// Output spatial size along one axis.
inline int64_t conv_out_size(int64_t in, int64_t k, const ConvGeometry& g) {
  return (in + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1;
}

// Validates (N,Ci,H,W) x (Co,Ci,kh,kw) [+ (Co)] and returns the output shape.
Shape conv2d_output_shape(const Tensor& input, const Tensor& weight, const ConvGeometry& g);

namespace omp {
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias,
                      const ConvGeometry& g);
// grad_input has the input's shape.
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             const ConvGeometry& g);
// Accumulates into grad_weight and (optionally) grad_bias.
void conv2d_backward_params(const Tensor& grad_out, const Tensor& input, Tensor& grad_weight,
                            Tensor* grad_bias, const ConvGeometry& g);
}  // namespace omp

namespace ref {
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias,
                      const ConvGeometry& g);
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             const ConvGeometry& g);
void conv2d_backward_params(const Tensor& grad_out, const Tensor& input, Tensor& grad_weight,
                            Tensor* grad_bias, const ConvGeometry& g);
}  // namespace ref

}  // namespace xpd::kernels
