#pragma once

#include <filesystem>
#include <vector>

#include "xpd/config.hpp"
#include "xpd/net.hpp"
#include "xpd/png_io.hpp"
#include "xpd/raster.hpp"
#include "xpd/scene.hpp"

namespace xpd::viz {

// Camera-frame unit normals from a depth map by central differences of the
// back-projected points, oriented towards the camera (n . P < 0). Pixels
// without a valid neighbourhood get (0, 0, 0).
Grid2<scene::Vec3> normals_from_depth(const DepthMap& depth, const scene::CameraIntrinsics& k);

// Per-pixel max over instances of the boundary weight map, at mask resolution.
RealMap weight_field(const LabelMap& labels, const DepthMap& depth,
                     raster::WeightMode mode = raster::WeightMode::kFullField);

io::Image8 overlay(const scene::RgbImage& rgb, const std::vector<BoolMap>& masks, int stride);
io::Image8 depth_colormap(const DepthMap& depth, double lo, double hi);
io::Image8 normal_image(const Grid2<scene::Vec3>& normals);
io::Image8 heatmap(const RealMap& values, int upscale = 1);

// `visualize` command: draws GT (and, with a checkpoint, predicted) panels
// for cfg.visualize.scene into out_dir.
void run(const config::RunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace xpd::viz
