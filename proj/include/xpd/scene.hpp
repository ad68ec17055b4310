#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "xpd/common.hpp"

// Procedural piecewise-planar scenes with exact depth and instance labels.
namespace xpd::scene {

using Vec3 = std::array<double, 3>;
using Rgb = std::array<double, 3>;
using RgbImage = Grid2<Rgb>;

struct CameraIntrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const;
  // Principal point at the image centre, focal length 0.8 * width.
  static CameraIntrinsics centered(int height, int width);
  bool operator==(const CameraIntrinsics&) const = default;
};

// Planar patch n . X = offset in the camera frame (x right, y down, z forward).
// Normals are oriented towards the camera, so offset <= 0.
struct PlanePrimitive {
  Vec3 normal{0, 0, -1};
  double offset = 0;
  std::vector<Vec3> polygon;
  Rgb albedo{0.5, 0.5, 0.5};

  void validate() const;
};

struct PlanarScene {
  RgbImage rgb;
  DepthMap depth;     // metres, 0 = invalid
  LabelMap labels;    // 0 = background, k >= 1 -> planes[k - 1]
  CameraIntrinsics intrinsics;
  std::vector<PlanePrimitive> planes;
  uint64_t seed = 0;

  int rows() const { return depth.rows(); }
  int cols() const { return depth.cols(); }
  int num_instances() const { return static_cast<int>(planes.size()); }
};

enum class Layout {
  kRoom,         // floor, walls and box faces
  kFrontoStack,  // full-frame backdrop at depth_max plus fronto-parallel patches
};

struct SceneConfig {
  struct IntRange {
    int min = 3, max = 8;
  };
  struct Range {
    double min = 0.5, max = 10.0;
  };
  IntRange num_planes;
  Range depth_m;
  int height = 192;
  int width = 256;
  Layout layout = Layout::kRoom;
  double min_coverage = 0.005;  // fraction of pixels per visible instance
  int max_attempts = 100;

  void validate() const;
};

PlanarScene generate_scene(uint64_t seed, const SceneConfig& config);

struct DepthRender {
  DepthMap depth;
  LabelMap labels;  // index + 1 of the nearest hit plane, 0 for no hit
};

// Casts one ray through each pixel centre (u, v) -> ((u - cx)/fx, (v - cy)/fy, 1)
// and keeps the nearest polygon hit.
DepthRender render_depth(std::span<const PlanePrimitive> planes, const CameraIntrinsics& intrinsics);

// Lambertian shading with a fixed light, per-plane albedo and a faint
// plane-anchored stripe texture. Pixels with label 0 and no depth are black.
RgbImage shade(std::span<const PlanePrimitive> planes, const CameraIntrinsics& intrinsics,
               const DepthRender& render);

// Moves instance boundaries by a smooth random displacement field whose
// per-pixel Chebyshev magnitude is at most `radius`. The result is still a
// partition with the same set of ids; only pixels within `radius` of a label
// transition can change.
LabelMap corrupt_boundaries(const LabelMap& labels, int radius, uint64_t seed);

}  // namespace xpd::scene
