#include "xpd/visualize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "xpd/checkpoint.hpp"
#include "xpd/losses.hpp"
#include "xpd/scene_io.hpp"

namespace xpd::viz {

namespace fs = std::filesystem;
using scene::Vec3;

Grid2<Vec3> normals_from_depth(const DepthMap& depth, const scene::CameraIntrinsics& k) {
  Grid2<Vec3> out(depth.rows(), depth.cols(), Vec3{0, 0, 0});
  auto point = [&](int r, int c) {
    const double z = depth(r, c);
    return Vec3{z * (c - k.cx) / k.fx, z * (r - k.cy) / k.fy, z};
  };
  for (int r = 1; r + 1 < depth.rows(); ++r)
    for (int c = 1; c + 1 < depth.cols(); ++c) {
      if (depth(r, c) <= 0 || depth(r, c - 1) <= 0 || depth(r, c + 1) <= 0 || depth(r - 1, c) <= 0 ||
          depth(r + 1, c) <= 0)
        continue;
      const Vec3 a = point(r, c + 1), b = point(r, c - 1), u = point(r + 1, c), d = point(r - 1, c);
      const Vec3 du{a[0] - b[0], a[1] - b[1], a[2] - b[2]};
      const Vec3 dv{u[0] - d[0], u[1] - d[1], u[2] - d[2]};
      Vec3 n{du[1] * dv[2] - du[2] * dv[1], du[2] * dv[0] - du[0] * dv[2], du[0] * dv[1] - du[1] * dv[0]};
      const double len = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
      if (len == 0) continue;
      const Vec3 p = point(r, c);
      const double s = (n[0] * p[0] + n[1] * p[1] + n[2] * p[2]) > 0 ? -1.0 : 1.0;
      out(r, c) = {s * n[0] / len, s * n[1] / len, s * n[2] / len};
    }
  return out;
}

RealMap weight_field(const LabelMap& labels, const DepthMap& depth, raster::WeightMode mode) {
  const DepthMap pooled = raster::pool_depth(depth, net::kMaskStride);
  RealMap field(pooled.rows(), pooled.cols(), 0.0);
  std::set<int> ids(labels.values().begin(), labels.values().end());
  for (int id : ids) {
    if (id <= 0) continue;
    const RealMap m = net::instance_mask(labels, id);
    const raster::WeightResult w = losses::dgbpl_weights(m, pooled, mode);
    for (size_t i = 0; i < field.size(); ++i) field[i] = std::max(field[i], w.weights[i]);
  }
  return field;
}

namespace {

std::array<uint8_t, 3> palette(int i) {
  // Golden-angle hues at fixed saturation/value.
  const double h = std::fmod(i * 137.508, 360.0) / 60.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = 1, g = x; break;
    case 1: r = x, g = 1; break;
    case 2: g = 1, b = x; break;
    case 3: g = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
  }
  return {static_cast<uint8_t>(40 + 215 * r), static_cast<uint8_t>(40 + 215 * g), static_cast<uint8_t>(40 + 215 * b)};
}

uint8_t to8(double v) { return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

io::Image8 overlay(const scene::RgbImage& rgb, const std::vector<BoolMap>& masks, int stride) {
  io::Image8 img{rgb.rows(), rgb.cols(), 3, std::vector<uint8_t>(static_cast<size_t>(rgb.size()) * 3)};
  for (int r = 0; r < rgb.rows(); ++r)
    for (int c = 0; c < rgb.cols(); ++c)
      for (int ch = 0; ch < 3; ++ch) img.data[(static_cast<size_t>(r) * rgb.cols() + c) * 3 + ch] = to8(rgb(r, c)[ch]);
  for (size_t k = 0; k < masks.size(); ++k) {
    const BoolMap& m = masks[k];
    const auto col = palette(static_cast<int>(k) + 1);
    for (int r = 0; r < rgb.rows(); ++r)
      for (int c = 0; c < rgb.cols(); ++c) {
        const int mr = std::min(r / stride, m.rows() - 1), mc = std::min(c / stride, m.cols() - 1);
        if (!m(mr, mc)) continue;
        const bool edge = !m.clamped(mr - 1, mc) || !m.clamped(mr + 1, mc) || !m.clamped(mr, mc - 1) ||
                          !m.clamped(mr, mc + 1);
        uint8_t* px = &img.data[(static_cast<size_t>(r) * rgb.cols() + c) * 3];
        for (int ch = 0; ch < 3; ++ch)
          px[ch] = edge ? 255 : static_cast<uint8_t>((px[ch] + static_cast<int>(col[ch])) / 2);
      }
  }
  return img;
}

io::Image8 depth_colormap(const DepthMap& depth, double lo, double hi) {
  io::Image8 img{depth.rows(), depth.cols(), 3, std::vector<uint8_t>(depth.size() * 3, 0)};
  const double span = std::max(hi - lo, 1e-9);
  for (size_t i = 0; i < depth.size(); ++i) {
    if (depth[i] <= 0) continue;
    const double t = std::clamp((depth[i] - lo) / span, 0.0, 1.0);
    // Blue (near) -> cyan -> yellow -> red (far).
    img.data[i * 3 + 0] = to8(std::clamp(1.5 - std::abs(4 * t - 3), 0.0, 1.0));
    img.data[i * 3 + 1] = to8(std::clamp(1.5 - std::abs(4 * t - 2), 0.0, 1.0));
    img.data[i * 3 + 2] = to8(std::clamp(1.5 - std::abs(4 * t - 1), 0.0, 1.0));
  }
  return img;
}

io::Image8 normal_image(const Grid2<Vec3>& normals) {
  io::Image8 img{normals.rows(), normals.cols(), 3, std::vector<uint8_t>(normals.size() * 3, 0)};
  for (size_t i = 0; i < normals.size(); ++i) {
    const Vec3& n = normals[i];
    if (n[0] == 0 && n[1] == 0 && n[2] == 0) continue;
    for (int ch = 0; ch < 3; ++ch) img.data[i * 3 + ch] = to8(0.5 * (n[ch] + 1.0));
  }
  return img;
}

io::Image8 heatmap(const RealMap& values, int upscale) {
  const int rows = values.rows() * upscale, cols = values.cols() * upscale;
  io::Image8 img{rows, cols, 3, std::vector<uint8_t>(static_cast<size_t>(rows) * cols * 3)};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double t = std::clamp(values(r / upscale, c / upscale), 0.0, 1.0);
      uint8_t* px = &img.data[(static_cast<size_t>(r) * cols + c) * 3];
      px[0] = to8(std::min(1.0, 2 * t));
      px[1] = to8(std::max(0.0, 2 * t - 1));
      px[2] = to8(0.2 * (1 - t));
    }
  return img;
}

namespace {

Grid2<uint16_t> to16(const RealMap& m, double scale) {
  Grid2<uint16_t> out(m.rows(), m.cols());
  for (size_t i = 0; i < m.size(); ++i)
    out[i] = static_cast<uint16_t>(std::lround(std::clamp(m[i] * scale, 0.0, 65535.0)));
  return out;
}

std::vector<BoolMap> gt_masks(const LabelMap& labels) {
  std::vector<BoolMap> out;
  std::set<int> ids(labels.values().begin(), labels.values().end());
  for (int id : ids)
    if (id > 0) out.push_back(net::binarize(net::instance_mask(labels, id)));
  return out;
}

}  // namespace

void run(const config::RunConfig& cfg, const fs::path& out_dir) {
  if (cfg.visualize.scene.empty()) throw ConfigError("visualize.scene is required");
  const scene::LoadedScene ls = scene::load_scene(cfg.visualize.scene);
  const scene::PlanarScene& s = ls.scene;
  const bool use_noisy = cfg.visualize.labels == "corrupted" && ls.noisy_labels.has_value();
  const LabelMap& labels = use_noisy ? *ls.noisy_labels : s.labels;
  std::unique_ptr<net::XpdNet> model;
  if (!cfg.visualize.checkpoint.empty()) model = checkpoint::load(cfg.visualize.checkpoint);

  const fs::path& dir = out_dir;
  fs::create_directories(dir);
  std::ofstream(out_dir / ".incomplete") << "visualize\n";

  double lo = 1e9, hi = 0;
  for (double d : s.depth.values())
    if (d > 0) lo = std::min(lo, d), hi = std::max(hi, d);
  if (hi <= 0) lo = 0, hi = 1;

  io::write_png8(dir / "gt_overlay.png", overlay(s.rgb, gt_masks(labels), net::kMaskStride));
  io::write_png8(dir / "gt_depth.png", depth_colormap(s.depth, lo, hi));
  io::write_png8(dir / "gt_normals.png", normal_image(normals_from_depth(s.depth, s.intrinsics)));

  const DepthMap pooled = raster::pool_depth(s.depth, net::kMaskStride);
  const raster::GradientMask g = raster::sobel_gradient_mask(pooled);
  RealMap boundary(pooled.rows(), pooled.cols(), 0.0);
  for (const BoolMap& m : gt_masks(labels)) {
    RealMap mr(m.rows(), m.cols());
    for (size_t i = 0; i < m.size(); ++i) mr[i] = m[i];
    const RealMap b = raster::laplacian_boundary(mr);
    for (size_t i = 0; i < b.size(); ++i) boundary[i] = std::max(boundary[i], b[i]);
  }
  const RealMap w = weight_field(labels, s.depth, cfg.loss.weight_mode);
  io::write_png8(dir / "weights.png", heatmap(w, net::kMaskStride));
  // 16-bit dumps: G in millimetre units, B and W scaled to full range.
  io::write_png16(dir / "G_mm.png", to16(g.values, 1000.0));
  io::write_png16(dir / "B.png", to16(boundary, 65535.0));
  io::write_png16(dir / "W.png", to16(w, 65535.0));

  if (model) {
    ag::NoGradGuard guard;
    const net::ForwardResult fr = model->forward(ag::constant(net::rgb_batch({&s.rgb})));
    const auto preds = net::assemble_instances(fr.seg, 0, cfg.eval.score_thresh, cfg.eval.nms_iou);
    std::vector<BoolMap> masks;
    for (const auto& p : preds) masks.push_back(net::binarize(p.mask));
    DepthMap d(s.rows(), s.cols());
    std::copy(fr.depth.depth.value().data(), fr.depth.depth.value().data() + d.size(), d.values().begin());
    io::write_png8(dir / "pred_overlay.png", overlay(s.rgb, masks, net::kMaskStride));
    io::write_png8(dir / "pred_depth.png", depth_colormap(d, lo, hi));
    io::write_png8(dir / "pred_normals.png", normal_image(normals_from_depth(d, s.intrinsics)));
  }
  fs::remove(out_dir / ".incomplete");
}

}  // namespace xpd::viz
