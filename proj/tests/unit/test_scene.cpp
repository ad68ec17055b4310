#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "xpd/png_io.hpp"
#include "xpd/scene.hpp"
#include "xpd/scene_io.hpp"

using namespace xpd;
using namespace xpd::scene;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xpd_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

PlanePrimitive fronto(double z, double x0, double x1, double y0, double y1) {
  PlanePrimitive p;
  p.normal = {0, 0, -1};
  p.offset = -z;
  p.polygon = {{x0, y0, z}, {x1, y0, z}, {x1, y1, z}, {x0, y1, z}};
  return p;
}

CameraIntrinsics small_camera() { return {40.0, 40.0, 16.0, 12.0, 32, 24}; }

SceneConfig small_config() {
  SceneConfig c;
  c.height = 64;
  c.width = 96;
  return c;
}

std::set<int32_t> ids(const LabelMap& l) { return {l.storage().begin(), l.storage().end()}; }

}  // namespace

TEST(Render, FrontoPlaneConstantDepth) {
  const PlanePrimitive p = fronto(2.0, -100, 100, -100, 100);
  const DepthRender r = render_depth(std::span(&p, 1), small_camera());
  for (double d : r.depth.values()) EXPECT_DOUBLE_EQ(d, 2.0);
  for (int32_t l : r.labels.values()) EXPECT_EQ(l, 1);
}

TEST(Render, EmptyPlaneList) {
  const DepthRender r = render_depth({}, small_camera());
  for (double d : r.depth.values()) EXPECT_EQ(d, 0.0);
  for (int32_t l : r.labels.values()) EXPECT_EQ(l, 0);
}

TEST(Render, NearPatchOccludesBackdrop) {
  const std::vector<PlanePrimitive> planes{fronto(3.0, -100, 100, -100, 100), fronto(1.0, -0.11, 0.21, -0.16, 0.06)};
  const CameraIntrinsics k = small_camera();
  const DepthRender r = render_depth(planes, k);
  int near = 0;
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      // Ray (x, y, 1) reaches the z = 1 patch at (x, y). Edges sit off the pixel lattice.
      const double x = (u - k.cx) / k.fx, y = (v - k.cy) / k.fy;
      const bool inside = x > -0.11 && x < 0.21 && y > -0.16 && y < 0.06;
      near += inside;
      EXPECT_EQ(r.labels(v, u), inside ? 2 : 1);
      EXPECT_DOUBLE_EQ(r.depth(v, u), inside ? 1.0 : 3.0);
    }
  EXPECT_GT(near, 10);
}

TEST(Render, TiltedPlaneRamp) {
  // z = 2 + s x; on the ray through column u, x = z (u - cx) / fx.
  const double s = 0.2, n = std::sqrt(1 + s * s);
  PlanePrimitive p;
  p.normal = {s / n, 0, -1 / n};
  p.offset = -2 / n;
  for (auto [x, y] : {std::pair{-5.0, -5.0}, {5.0, -5.0}, {5.0, 5.0}, {-5.0, 5.0}}) p.polygon.push_back({x, y, 2 + s * x});
  const CameraIntrinsics k = small_camera();
  const DepthRender r = render_depth(std::span(&p, 1), k);
  for (int u = 0; u < k.width; ++u) {
    const double expected = 2.0 / (1.0 - s * (u - k.cx) / k.fx);
    EXPECT_NEAR(r.depth(5, u), expected, 1e-12);
  }
  EXPECT_DOUBLE_EQ(r.depth(5, 16), 2.0);
}

TEST(Render, PreconditionsAndDomain) {
  PlanePrimitive behind = fronto(0.01, -1, 1, -1, 1);
  EXPECT_THROW(render_depth(std::span(&behind, 1), small_camera()), PreconditionError);
  PlanePrimitive bad = fronto(2, -1, 1, -1, 1);
  bad.normal = {0, 0, -2};
  EXPECT_THROW(render_depth(std::span(&bad, 1), small_camera()), DomainError);
  // A plane containing the optical axis direction is a non-hit, not an error.
  PlanePrimitive edge;
  edge.normal = {1, 0, 0};
  edge.offset = 0.3;
  edge.polygon = {{0.3, -1, 1}, {0.3, 1, 1}, {0.3, 1, 3}, {0.3, -1, 3}};
  EXPECT_NO_THROW(render_depth(std::span(&edge, 1), small_camera()));
}

TEST(Generate, SingleFrontoPlane) {
  SceneConfig c = small_config();
  c.layout = Layout::kFrontoStack;
  c.num_planes = {1, 1};
  c.depth_m = {2.0, 2.0};
  const PlanarScene s = generate_scene(3, c);
  for (double d : s.depth.values()) EXPECT_NEAR(d, 2.0, 1e-12);
  for (int32_t l : s.labels.values()) EXPECT_EQ(l, 1);
}

TEST(Generate, Deterministic) {
  const PlanarScene a = generate_scene(7, small_config()), b = generate_scene(7, small_config());
  EXPECT_EQ(a.depth, b.depth);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.rgb, b.rgb);
  EXPECT_NE(generate_scene(8, small_config()).labels, a.labels);
}

TEST(Generate, InvariantsAndDepthLabelConsistency) {
  for (Layout layout : {Layout::kRoom, Layout::kFrontoStack}) {
    SceneConfig c = small_config();
    c.layout = layout;
    for (uint64_t seed = 0; seed < 12; ++seed) {
      const PlanarScene s = generate_scene(seed, c);
      const int k = s.num_instances();
      EXPECT_GE(k, c.num_planes.min);
      EXPECT_LE(k, c.num_planes.max);
      std::vector<int> count(k + 1, 0);
      for (int32_t l : s.labels.values()) {
        ASSERT_GE(l, 0);
        ASSERT_LE(l, k);
        ++count[l];
      }
      for (int i = 1; i <= k; ++i) EXPECT_GE(count[i], c.min_coverage * c.height * c.width);
      const CameraIntrinsics& K = s.intrinsics;
      // Ray/plane oracle on a 32x32 subsample.
      for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) {
          const int v = i * c.height / 32, u = j * c.width / 32;
          const int32_t l = s.labels(v, u);
          if (l == 0) continue;
          const PlanePrimitive& p = s.planes[l - 1];
          const Vec3 d{(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0};
          const double t = p.offset / (p.normal[0] * d[0] + p.normal[1] * d[1] + p.normal[2] * d[2]);
          ASSERT_NEAR(s.depth(v, u), t, 1e-6);
        }
      for (double d : s.depth.values())
        if (d > 0) ASSERT_TRUE(d >= c.depth_m.min - 1e-9 && d <= c.depth_m.max + 1e-9);
    }
  }
}

TEST(Generate, ConfigErrors) {
  SceneConfig c = small_config();
  c.num_planes = {0, 0};
  EXPECT_THROW(generate_scene(1, c), ConfigError);
  c = small_config();
  c.depth_m = {-1, 2};
  EXPECT_THROW(generate_scene(1, c), ConfigError);
  c = small_config();
  c.height = 16;
  EXPECT_THROW(generate_scene(1, c), ConfigError);
  c = small_config();
  c.layout = Layout::kFrontoStack;
  c.num_planes = {200, 200};
  c.max_attempts = 2;
  EXPECT_THROW(generate_scene(1, c), GenerationError);
}

TEST(Corrupt, RadiusZeroIsIdentity) {
  const PlanarScene s = generate_scene(1, small_config());
  EXPECT_EQ(corrupt_boundaries(s.labels, 0, 99), s.labels);
}

TEST(Corrupt, LeftHalfStaysNearDividingLine) {
  LabelMap l(40, 40, 0);
  for (int r = 0; r < 40; ++r)
    for (int c = 0; c < 20; ++c) l(r, c) = 1;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const LabelMap o = corrupt_boundaries(l, 4, seed);
    for (int r = 0; r < 40; ++r)
      for (int c = 0; c < 40; ++c)
        if (o(r, c) != l(r, c)) ASSERT_TRUE(c >= 16 && c <= 23) << c;
  }
}

TEST(Corrupt, LocalityAndIdSetOnRandomScenes) {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const PlanarScene s = generate_scene(seed, small_config());
    const int radius = 4;
    const LabelMap o = corrupt_boundaries(s.labels, radius, seed * 31 + 1);
    ASSERT_EQ(ids(o), ids(s.labels));
    // Brute-force distance to the nearest pixel with a differing 4-neighbour.
    std::vector<std::pair<int, int>> edge;
    for (int r = 0; r < s.rows(); ++r)
      for (int c = 0; c < s.cols(); ++c) {
        bool e = false;
        if (r > 0) e |= s.labels(r - 1, c) != s.labels(r, c);
        if (r + 1 < s.rows()) e |= s.labels(r + 1, c) != s.labels(r, c);
        if (c > 0) e |= s.labels(r, c - 1) != s.labels(r, c);
        if (c + 1 < s.cols()) e |= s.labels(r, c + 1) != s.labels(r, c);
        if (e) edge.emplace_back(r, c);
      }
    for (int r = 0; r < s.rows(); ++r)
      for (int c = 0; c < s.cols(); ++c) {
        if (o(r, c) == s.labels(r, c)) continue;
        int best = 1 << 20;
        for (auto [er, ec] : edge) best = std::min(best, std::max(std::abs(er - r), std::abs(ec - c)));
        ASSERT_LE(best, radius) << "seed " << seed;
      }
  }
}

TEST(Corrupt, DeterministicAndChanges) {
  const PlanarScene s = generate_scene(4, small_config());
  const LabelMap a = corrupt_boundaries(s.labels, 4, 5), b = corrupt_boundaries(s.labels, 4, 5);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, s.labels);
}

TEST(Corrupt, RadiusTooLarge) {
  LabelMap l(20, 40, 1);
  EXPECT_THROW(corrupt_boundaries(l, 11, 1), ConfigError);
  EXPECT_THROW(corrupt_boundaries(l, -1, 1), ConfigError);
  EXPECT_NO_THROW(corrupt_boundaries(l, 10, 1));
}

TEST(SceneIo, RoundTrip) {
  const PlanarScene s = generate_scene(12, small_config());
  const LabelMap noisy = corrupt_boundaries(s.labels, 3, 1);
  const fs::path dir = temp_dir("scene_io");
  save_scene(dir, s, &noisy);
  const LoadedScene l = load_scene(dir);
  EXPECT_EQ(l.scene.labels, s.labels);
  ASSERT_TRUE(l.noisy_labels.has_value());
  EXPECT_EQ(*l.noisy_labels, noisy);
  for (size_t i = 0; i < s.depth.size(); ++i) EXPECT_LE(std::abs(l.scene.depth[i] - s.depth[i]), 1e-3);
  EXPECT_EQ(l.scene.intrinsics, s.intrinsics);
  EXPECT_EQ(l.scene.seed, s.seed);
  ASSERT_EQ(l.scene.planes.size(), s.planes.size());
  EXPECT_EQ(l.scene.planes[0].offset, s.planes[0].offset);
  for (size_t i = 0; i < s.rgb.size(); ++i)
    for (int c = 0; c < 3; ++c) EXPECT_LE(std::abs(l.scene.rgb[i][c] - s.rgb[i][c]), 0.5 / 255 + 1e-12);
  fs::remove_all(dir);
}

TEST(SceneIo, MissingDirectory) { EXPECT_THROW(load_scene("/nonexistent/xpd/scene"), IoError); }

TEST(PngIo, RoundTrips) {
  const fs::path dir = temp_dir("png");
  fs::create_directories(dir);
  io::Image8 img{3, 5, 3, {}};
  for (int i = 0; i < 45; ++i) img.data.push_back(static_cast<uint8_t>(i * 5));
  io::write_png8(dir / "a.png", img);
  const io::Image8 back = io::read_png8(dir / "a.png");
  EXPECT_EQ(back.rows, 3);
  EXPECT_EQ(back.cols, 5);
  EXPECT_EQ(back.channels, 3);
  EXPECT_EQ(back.data, img.data);
  Grid2<uint16_t> g(4, 6);
  for (size_t i = 0; i < g.size(); ++i) g[i] = static_cast<uint16_t>(i * 2731);
  io::write_png16(dir / "b.png", g);
  EXPECT_EQ(io::read_png16(dir / "b.png"), g);
  fs::remove_all(dir);
}
