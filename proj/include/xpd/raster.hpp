#pragma once

#include <span>
#include <vector>

#include "xpd/common.hpp"

// Image-processing primitives behind the depth-guided boundary loss. All 3x3
// operators use replicate padding.
namespace xpd::raster {

struct Pixel {
  int row = 0;
  int col = 0;
  bool operator==(const Pixel&) const = default;
};

// |Sobel_x(depth)| + |Sobel_y(depth)|. `valid` is 0 wherever the 3x3
// neighbourhood (after clamping) touches a depth value <= 0.
struct GradientMask {
  RealMap values;
  BoolMap valid;
};

GradientMask sobel_gradient_mask(const DepthMap& depth);

// Signed 4-neighbour Laplacian response [0,1,0; 1,-4,1; 0,1,0].
RealMap laplacian_response(const RealMap& mask);
// min(|Laplacian(mask)|, 1). Throws DomainError for values outside [0, 1].
RealMap laplacian_boundary(const RealMap& mask);

// Raw-buffer forms shared with the autograd op. The adjoint accumulates.
void laplacian_plane(const double* in, int rows, int cols, double* out);
void laplacian_plane_adjoint(const double* grad_out, int rows, int cols, double* grad_in);

// Population standard deviation of the window x window G values centred on
// each queried pixel. Invalid entries are skipped; fewer than two valid
// entries gives 0. `window` must be odd and >= 3.
std::vector<double> windowed_std(const GradientMask& g, std::span<const Pixel> at, int window = 3);
// Same statistic evaluated at every pixel (parallel over rows).
RealMap windowed_std_map(const GradientMask& g, int window = 3);

enum class WeightMode { kGtBandOnly, kFullField };

struct WeightResult {
  RealMap weights;
  double boundary_max = 0.0;  // m: max std over GT-boundary pixels
  bool degenerate = false;    // GT boundary was empty
};

inline constexpr double kWeightEps = 1e-8;

// Max-normalizes std values against the largest std found on the GT boundary
// (gt_boundary > 0). kGtBandOnly keeps weights on boundary pixels only;
// kFullField clips std/m to [0, 1] everywhere.
WeightResult normalize_weights(const RealMap& std_map, const RealMap& gt_boundary, WeightMode mode);

// factor x factor average over valid (> 0) depth samples; 0 if none valid.
DepthMap pool_depth(const DepthMap& depth, int factor);

// Chebyshev (chessboard) distance to the nearest seed pixel; a large value
// when there are no seeds.
Grid2<int> chessboard_distance(const BoolMap& seeds);

// Pixels whose 4-neighbourhood contains a different label.
BoolMap label_transitions(const LabelMap& labels);

// Binary dilation with a (2r+1)x(2r+1) square.
BoolMap dilate(const BoolMap& mask, int radius);

}  // namespace xpd::raster
