#include "xpd/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace xpd::raster {

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace

GradientMask sobel_gradient_mask(const DepthMap& depth) {
  const int rows = depth.rows(), cols = depth.cols();
  if (rows < 3 || cols < 3) throw ShapeError("sobel_gradient_mask: depth smaller than 3x3");
  GradientMask g{RealMap(rows, cols), BoolMap(rows, cols, 1)};
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double n[3][3];
      bool ok = true;
      for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j) {
          n[i + 1][j + 1] = depth.clamped(r + i, c + j);
          ok = ok && n[i + 1][j + 1] > 0.0;
        }
      const double gx = (n[0][2] + 2.0 * n[1][2] + n[2][2]) - (n[0][0] + 2.0 * n[1][0] + n[2][0]);
      const double gy = (n[2][0] + 2.0 * n[2][1] + n[2][2]) - (n[0][0] + 2.0 * n[0][1] + n[0][2]);
      g.values(r, c) = std::abs(gx) + std::abs(gy);
      g.valid(r, c) = ok ? 1 : 0;
    }
  }
  return g;
}

void laplacian_plane(const double* in, int rows, int cols, double* out) {
  for (int r = 0; r < rows; ++r) {
    const int up = std::max(r - 1, 0), down = std::min(r + 1, rows - 1);
    for (int c = 0; c < cols; ++c) {
      const int left = std::max(c - 1, 0), right = std::min(c + 1, cols - 1);
      out[r * cols + c] = in[up * cols + c] + in[down * cols + c] + in[r * cols + left] +
                          in[r * cols + right] - 4.0 * in[r * cols + c];
    }
  }
}

void laplacian_plane_adjoint(const double* grad_out, int rows, int cols, double* grad_in) {
  for (int r = 0; r < rows; ++r) {
    const int up = std::max(r - 1, 0), down = std::min(r + 1, rows - 1);
    for (int c = 0; c < cols; ++c) {
      const int left = std::max(c - 1, 0), right = std::min(c + 1, cols - 1);
      const double g = grad_out[r * cols + c];
      grad_in[up * cols + c] += g;
      grad_in[down * cols + c] += g;
      grad_in[r * cols + left] += g;
      grad_in[r * cols + right] += g;
      grad_in[r * cols + c] -= 4.0 * g;
    }
  }
}

RealMap laplacian_response(const RealMap& mask) {
  RealMap out(mask.rows(), mask.cols());
  if (!mask.empty()) laplacian_plane(mask.storage().data(), mask.rows(), mask.cols(), out.storage().data());
  return out;
}

RealMap laplacian_boundary(const RealMap& mask) {
  for (double v : mask.values())
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("laplacian_boundary: mask value outside [0,1]");
  RealMap out = laplacian_response(mask);
  for (double& v : out.storage()) v = std::min(std::abs(v), 1.0);
  return out;
}

namespace {

double window_std_at(const GradientMask& g, int r, int c, int half) {
  double vals[64];
  std::vector<double> big;
  const int side = 2 * half + 1;
  double* buf = vals;
  if (side * side > 64) {
    big.resize(static_cast<size_t>(side) * side);
    buf = big.data();
  }
  int n = 0;
  for (int i = -half; i <= half; ++i)
    for (int j = -half; j <= half; ++j) {
      const int rr = clampi(r + i, 0, g.values.rows() - 1);
      const int cc = clampi(c + j, 0, g.values.cols() - 1);
      if (g.valid(rr, cc)) buf[n++] = g.values(rr, cc);
    }
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (int k = 0; k < n; ++k) mean += buf[k];
  mean /= n;
  double ss = 0.0;
  for (int k = 0; k < n; ++k) ss += (buf[k] - mean) * (buf[k] - mean);
  return std::sqrt(ss / n);
}

void check_window(int window) {
  if (window < 3 || window % 2 == 0)
    throw ConfigError("windowed_std: window must be odd and >= 3, got " + std::to_string(window));
}

}  // namespace

std::vector<double> windowed_std(const GradientMask& g, std::span<const Pixel> at, int window) {
  check_window(window);
  std::vector<double> out;
  out.reserve(at.size());
  for (const Pixel& p : at) {
    if (!g.values.inside(p.row, p.col)) throw ShapeError("windowed_std: pixel outside the array");
    out.push_back(window_std_at(g, p.row, p.col, window / 2));
  }
  return out;
}

RealMap windowed_std_map(const GradientMask& g, int window) {
  check_window(window);
  const int rows = g.values.rows(), cols = g.values.cols();
  RealMap out(rows, cols);
  const int half = window / 2;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out(r, c) = window_std_at(g, r, c, half);
  return out;
}

WeightResult normalize_weights(const RealMap& std_map, const RealMap& gt_boundary, WeightMode mode) {
  if (!std_map.same_shape(gt_boundary)) throw ShapeError("normalize_weights: shape mismatch");
  WeightResult res{RealMap(std_map.rows(), std_map.cols()), 0.0, true};
  for (size_t i = 0; i < std_map.size(); ++i) {
    if (std_map[i] < 0.0) throw DomainError("normalize_weights: negative std");
    if (gt_boundary[i] > 0.0) {
      res.degenerate = false;
      res.boundary_max = std::max(res.boundary_max, std_map[i]);
    }
  }
  if (res.degenerate || res.boundary_max == 0.0) return res;
  const double denom = res.boundary_max + kWeightEps;
  for (size_t i = 0; i < std_map.size(); ++i) {
    if (mode == WeightMode::kGtBandOnly) {
      res.weights[i] = gt_boundary[i] > 0.0 ? std_map[i] / denom : 0.0;
    } else {
      res.weights[i] = std::clamp(std_map[i] / denom, 0.0, 1.0);
    }
  }
  return res;
}

DepthMap pool_depth(const DepthMap& depth, int factor) {
  if (factor < 1 || depth.rows() % factor || depth.cols() % factor)
    throw ShapeError("pool_depth: size not divisible by pooling factor");
  DepthMap out(depth.rows() / factor, depth.cols() / factor);
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) {
      double sum = 0.0;
      int n = 0;
      for (int i = 0; i < factor; ++i)
        for (int j = 0; j < factor; ++j) {
          const double d = depth(r * factor + i, c * factor + j);
          if (d > 0.0) {
            sum += d;
            ++n;
          }
        }
      out(r, c) = n ? sum / n : 0.0;
    }
  return out;
}

Grid2<int> chessboard_distance(const BoolMap& seeds) {
  const int rows = seeds.rows(), cols = seeds.cols();
  const int inf = std::numeric_limits<int>::max() / 4;
  Grid2<int> d(rows, cols, inf);
  for (size_t i = 0; i < seeds.size(); ++i)
    if (seeds[i]) d[i] = 0;
  // Two-pass chamfer with unit weights on all eight neighbours is exact for
  // the chessboard metric.
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      int v = d(r, c);
      if (r > 0) {
        v = std::min(v, d(r - 1, c) + 1);
        if (c > 0) v = std::min(v, d(r - 1, c - 1) + 1);
        if (c + 1 < cols) v = std::min(v, d(r - 1, c + 1) + 1);
      }
      if (c > 0) v = std::min(v, d(r, c - 1) + 1);
      d(r, c) = v;
    }
  for (int r = rows - 1; r >= 0; --r)
    for (int c = cols - 1; c >= 0; --c) {
      int v = d(r, c);
      if (r + 1 < rows) {
        v = std::min(v, d(r + 1, c) + 1);
        if (c > 0) v = std::min(v, d(r + 1, c - 1) + 1);
        if (c + 1 < cols) v = std::min(v, d(r + 1, c + 1) + 1);
      }
      if (c + 1 < cols) v = std::min(v, d(r, c + 1) + 1);
      d(r, c) = v;
    }
  return d;
}

BoolMap label_transitions(const LabelMap& labels) {
  BoolMap out(labels.rows(), labels.cols());
  for (int r = 0; r < labels.rows(); ++r)
    for (int c = 0; c < labels.cols(); ++c) {
      const int32_t v = labels(r, c);
      const bool edge = (r > 0 && labels(r - 1, c) != v) || (r + 1 < labels.rows() && labels(r + 1, c) != v) ||
                        (c > 0 && labels(r, c - 1) != v) || (c + 1 < labels.cols() && labels(r, c + 1) != v);
      out(r, c) = edge ? 1 : 0;
    }
  return out;
}

BoolMap dilate(const BoolMap& mask, int radius) {
  if (radius <= 0) return mask;
  const Grid2<int> dist = chessboard_distance(mask);
  BoolMap out(mask.rows(), mask.cols());
  for (size_t i = 0; i < mask.size(); ++i) out[i] = dist[i] <= radius ? 1 : 0;
  return out;
}

}  // namespace xpd::raster
