#include "xpd/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "xpd/rng.hpp"

namespace xpd::scene {

namespace {

Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
Vec3 normalized(const Vec3& a) { return (1.0 / norm(a)) * a; }

constexpr double kNearClip = 0.06;

// In-plane orthonormal basis for point-in-polygon tests.
struct PlaneFrame {
  Vec3 u, v;
  std::vector<std::array<double, 2>> poly2d;
};

PlaneFrame make_frame(const PlanePrimitive& p) {
  const Vec3& n = p.normal;
  const Vec3 helper = std::abs(n[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  PlaneFrame f;
  f.u = normalized(cross(n, helper));
  f.v = cross(n, f.u);
  for (const Vec3& q : p.polygon) f.poly2d.push_back({dot(q, f.u), dot(q, f.v)});
  return f;
}

bool inside_polygon(const std::vector<std::array<double, 2>>& poly, double x, double y) {
  bool in = false;
  const size_t n = poly.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[i][0], yi = poly[i][1], xj = poly[j][0], yj = poly[j][1];
    if ((yi > y) != (yj > y)) {
      const double xc = xi + (y - yi) * (xj - xi) / (yj - yi);
      if (x < xc) in = !in;
    }
  }
  return in;
}

// Sutherland-Hodgman clip against z >= z_min.
std::vector<Vec3> clip_near(const std::vector<Vec3>& poly, double z_min) {
  std::vector<Vec3> out;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec3& a = poly[i];
    const Vec3& b = poly[(i + 1) % n];
    const bool ain = a[2] >= z_min, bin = b[2] >= z_min;
    if (ain) out.push_back(a);
    if (ain != bin) {
      const double t = (z_min - a[2]) / (b[2] - a[2]);
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

// Builds a camera-frame plane from a world-frame polygon (world y is up).
struct Pose {
  Vec3 right, down, forward, position;
  Vec3 to_camera(const Vec3& xw) const {
    const Vec3 d = xw - position;
    return {dot(d, right), dot(d, down), dot(d, forward)};
  }
};

std::optional<PlanePrimitive> make_plane(const Pose& pose, const std::vector<Vec3>& world_poly, const Rgb& albedo) {
  std::vector<Vec3> cam;
  for (const Vec3& q : world_poly) cam.push_back(pose.to_camera(q));
  cam = clip_near(cam, kNearClip);
  if (cam.size() < 3) return std::nullopt;
  Vec3 n = normalized(cross(cam[1] - cam[0], cam[2] - cam[0]));
  double offset = dot(n, cam[0]);
  if (offset > 0) {
    n = -1.0 * n;
    offset = -offset;
  }
  if (std::abs(offset) < 1e-6) return std::nullopt;  // plane through the camera
  // Project vertices exactly onto the plane to remove round-off.
  for (Vec3& q : cam) q = q - (dot(n, q) - offset) * n;
  return PlanePrimitive{n, offset, std::move(cam), albedo};
}

Rgb random_albedo(Rng& rng) { return {rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9)}; }

std::vector<PlanePrimitive> room_planes(Rng& rng) {
  const double cam_height = rng.uniform(1.2, 1.6);
  const double yaw = rng.uniform(-30.0, 30.0) * std::numbers::pi / 180.0;
  const double pitch = rng.uniform(-25.0, -8.0) * std::numbers::pi / 180.0;
  const double left = rng.uniform(1.5, 3.5), right = rng.uniform(1.5, 3.5);
  const double back = rng.uniform(3.0, 6.0), behind = rng.uniform(0.5, 2.0);
  const double wall_h = rng.uniform(2.6, 3.2);

  Pose pose;
  pose.forward = {std::sin(yaw) * std::cos(pitch), std::sin(pitch), std::cos(yaw) * std::cos(pitch)};
  pose.right = {std::cos(yaw), 0.0, -std::sin(yaw)};
  pose.down = cross(pose.right, pose.forward);
  pose.position = {0.0, cam_height, 0.0};

  const double x0 = -left, x1 = right, z0 = -behind, z1 = back;
  std::vector<std::vector<Vec3>> polys = {
      {{x0, 0, z0}, {x1, 0, z0}, {x1, 0, z1}, {x0, 0, z1}},                  // floor
      {{x0, 0, z1}, {x1, 0, z1}, {x1, wall_h, z1}, {x0, wall_h, z1}},        // back wall
      {{x0, 0, z0}, {x0, 0, z1}, {x0, wall_h, z1}, {x0, wall_h, z0}},        // left wall
      {{x1, 0, z0}, {x1, 0, z1}, {x1, wall_h, z1}, {x1, wall_h, z0}},        // right wall
      {{x0, 0, z0}, {x1, 0, z0}, {x1, wall_h, z0}, {x0, wall_h, z0}},        // wall behind
  };

  // Up to two boxes on the floor; a second box is dropped if the visible
  // face count would exceed four.
  std::vector<std::vector<Vec3>> box_faces;
  const int boxes = rng.uniform_int(0, 2);
  for (int b = 0; b < boxes; ++b) {
    const double w = rng.uniform(0.5, 1.2), d = rng.uniform(0.4, 1.0), h = rng.uniform(0.4, 1.1);
    const double cx = rng.uniform(x0 + w / 2 + 0.1, x1 - w / 2 - 0.1);
    const double cz = rng.uniform(1.8, z1 - d / 2 - 0.2);
    const double bx0 = cx - w / 2, bx1 = cx + w / 2, bz0 = cz - d / 2, bz1 = cz + d / 2;
    struct Face {
      std::vector<Vec3> poly;
      Vec3 outward;
      Vec3 center;
    };
    const std::vector<Face> faces = {
        {{{bx0, h, bz0}, {bx1, h, bz0}, {bx1, h, bz1}, {bx0, h, bz1}}, {0, 1, 0}, {cx, h, cz}},
        {{{bx0, 0, bz0}, {bx1, 0, bz0}, {bx1, h, bz0}, {bx0, h, bz0}}, {0, 0, -1}, {cx, h / 2, bz0}},
        {{{bx0, 0, bz1}, {bx1, 0, bz1}, {bx1, h, bz1}, {bx0, h, bz1}}, {0, 0, 1}, {cx, h / 2, bz1}},
        {{{bx0, 0, bz0}, {bx0, 0, bz1}, {bx0, h, bz1}, {bx0, h, bz0}}, {-1, 0, 0}, {bx0, h / 2, cz}},
        {{{bx1, 0, bz0}, {bx1, 0, bz1}, {bx1, h, bz1}, {bx1, h, bz0}}, {1, 0, 0}, {bx1, h / 2, cz}},
    };
    std::vector<std::vector<Vec3>> facing;
    for (const Face& f : faces)
      if (dot(f.outward, pose.position - f.center) > 1e-9) facing.push_back(f.poly);
    if (box_faces.size() + facing.size() > 4) break;
    box_faces.insert(box_faces.end(), facing.begin(), facing.end());
  }
  polys.insert(polys.end(), box_faces.begin(), box_faces.end());

  std::vector<PlanePrimitive> planes;
  for (const auto& poly : polys)
    if (auto p = make_plane(pose, poly, random_albedo(rng))) planes.push_back(std::move(*p));
  return planes;
}

std::vector<PlanePrimitive> fronto_planes(Rng& rng, const SceneConfig& cfg, const CameraIntrinsics& k, int count) {
  std::vector<PlanePrimitive> planes;
  auto rect = [](double z, double x0, double x1, double y0, double y1, const Rgb& albedo) {
    return PlanePrimitive{{0, 0, -1}, -z, {{x0, y0, z}, {x1, y0, z}, {x1, y1, z}, {x0, y1, z}}, albedo};
  };
  const double zb = cfg.depth_m.max;
  const double big = 10.0 * zb * std::max(k.width / k.fx, k.height / k.fy);
  planes.push_back(rect(zb, -big, big, -big, big, random_albedo(rng)));
  for (int i = 1; i < count; ++i) {
    const double z = rng.uniform(cfg.depth_m.min, cfg.depth_m.max);
    // Patch spans 25-50% of the frame at depth z.
    const double half_w = z * k.width / k.fx / 2, half_h = z * k.height / k.fy / 2;
    const double w = rng.uniform(0.25, 0.5) * 2 * half_w, h = rng.uniform(0.25, 0.5) * 2 * half_h;
    const double x0 = rng.uniform(-half_w, half_w - w), y0 = rng.uniform(-half_h, half_h - h);
    planes.push_back(rect(z, x0, x0 + w, y0, y0 + h, random_albedo(rng)));
  }
  return planes;
}

}  // namespace

void CameraIntrinsics::validate() const {
  if (!(fx > 0 && fy > 0)) throw ConfigError("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ConfigError("intrinsics: image size must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
    throw ConfigError("intrinsics: principal point outside the image");
}

CameraIntrinsics CameraIntrinsics::centered(int height, int width) {
  return {0.8 * width, 0.8 * width, width / 2.0, height / 2.0, width, height};
}

void PlanePrimitive::validate() const {
  if (std::abs(norm(normal) - 1.0) > 1e-9) throw DomainError("plane normal is not unit length");
  if (polygon.size() < 3) throw DomainError("plane polygon needs at least 3 vertices");
  for (const Vec3& q : polygon)
    if (std::abs(dot(normal, q) - offset) > 1e-6) throw DomainError("polygon vertex off its plane");
}

void SceneConfig::validate() const {
  if (num_planes.min < 1 || num_planes.max < num_planes.min)
    throw ConfigError("scene config: num_planes range must be non-empty with min >= 1");
  if (!(depth_m.min > 0.0) || depth_m.max < depth_m.min)
    throw ConfigError("scene config: depth range must be positive and non-empty");
  if (height < 32 || width < 32) throw ConfigError("scene config: image must be at least 32x32");
  if (num_planes.max > 255) throw ConfigError("scene config: at most 255 instances fit in 8-bit labels");
  if (min_coverage < 0.0 || min_coverage >= 1.0) throw ConfigError("scene config: min_coverage outside [0,1)");
  if (max_attempts < 1) throw ConfigError("scene config: max_attempts must be >= 1");
}

DepthRender render_depth(std::span<const PlanePrimitive> planes, const CameraIntrinsics& k) {
  k.validate();
  for (const PlanePrimitive& p : planes) {
    p.validate();
    for (const Vec3& q : p.polygon)
      if (q[2] <= 0.05) throw PreconditionError("render_depth: polygon vertex behind the near limit (z <= 0.05 m)");
  }
  std::vector<PlaneFrame> frames;
  frames.reserve(planes.size());
  for (const PlanePrimitive& p : planes) frames.push_back(make_frame(p));

  DepthRender out{DepthMap(k.height, k.width), LabelMap(k.height, k.width)};
#pragma omp parallel for schedule(static)
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Vec3 d{(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
      double best = 0.0;
      int best_id = 0;
      for (size_t i = 0; i < planes.size(); ++i) {
        const double denom = dot(planes[i].normal, d);
        if (std::abs(denom) < 1e-12) continue;
        const double t = planes[i].offset / denom;
        if (t <= 0.0) continue;
        if (best_id != 0 && t >= best) continue;
        const Vec3 x = t * d;
        if (!inside_polygon(frames[i].poly2d, dot(x, frames[i].u), dot(x, frames[i].v))) continue;
        best = t;
        best_id = static_cast<int>(i) + 1;
      }
      out.depth(v, u) = best_id ? best : 0.0;
      out.labels(v, u) = best_id;
    }
  }
  return out;
}

RgbImage shade(std::span<const PlanePrimitive> planes, const CameraIntrinsics& k, const DepthRender& render) {
  const Vec3 light = normalized(Vec3{-0.4, -0.7, -0.6});
  constexpr double kAmbient = 0.35;
  std::vector<PlaneFrame> frames;
  for (const PlanePrimitive& p : planes) frames.push_back(make_frame(p));
  RgbImage rgb(k.height, k.width, Rgb{0, 0, 0});
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      const int id = render.labels(v, u);
      if (id <= 0) continue;
      const PlanePrimitive& p = planes[static_cast<size_t>(id - 1)];
      const double z = render.depth(v, u);
      const Vec3 x{z * (u - k.cx) / k.fx, z * (v - k.cy) / k.fy, z};
      const double lambert = std::max(0.0, dot(p.normal, light));
      const double tex = 1.0 + 0.06 * std::sin(2.0 * std::numbers::pi * dot(x, frames[id - 1].u) / 0.35) *
                                   std::sin(2.0 * std::numbers::pi * dot(x, frames[id - 1].v) / 0.35);
      const double s = (kAmbient + (1.0 - kAmbient) * lambert) * tex;
      for (int ch = 0; ch < 3; ++ch) rgb(v, u)[ch] = std::clamp(p.albedo[ch] * s, 0.0, 1.0);
    }
  return rgb;
}

PlanarScene generate_scene(uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  const CameraIntrinsics k = CameraIntrinsics::centered(cfg.height, cfg.width);
  const double total = static_cast<double>(cfg.height) * cfg.width;
  Rng rng(Rng::mix(seed, 0x5ce9e));

  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    std::vector<PlanePrimitive> planes;
    if (cfg.layout == Layout::kRoom) {
      planes = room_planes(rng);
    } else {
      planes = fronto_planes(rng, cfg, k, rng.uniform_int(cfg.num_planes.min, cfg.num_planes.max));
    }
    DepthRender render = render_depth(planes, k);

    // Drop instances below the coverage floor (their pixels become background
    // with valid depth), then renumber the survivors compactly.
    std::vector<int64_t> counts(planes.size() + 1, 0);
    for (int32_t id : render.labels.values()) ++counts[static_cast<size_t>(id)];
    std::vector<int32_t> remap(planes.size() + 1, 0);
    std::vector<PlanePrimitive> kept;
    for (size_t i = 1; i <= planes.size(); ++i)
      if (counts[i] > 0 && counts[i] >= cfg.min_coverage * total) {
        kept.push_back(planes[i - 1]);
        remap[i] = static_cast<int32_t>(kept.size());
      }
    const int visible = static_cast<int>(kept.size());
    if (visible < cfg.num_planes.min || visible > cfg.num_planes.max) continue;

    bool depth_ok = true;
    for (double d : render.depth.values())
      if (d > 0.0 && (d < cfg.depth_m.min - 1e-9 || d > cfg.depth_m.max + 1e-9)) {
        depth_ok = false;
        break;
      }
    if (!depth_ok) continue;

    PlanarScene scene;
    scene.intrinsics = k;
    scene.seed = seed;
    scene.rgb = shade(planes, k, render);
    for (int32_t& id : render.labels.storage()) id = remap[static_cast<size_t>(id)];
    scene.depth = std::move(render.depth);
    scene.labels = std::move(render.labels);
    scene.planes = std::move(kept);
    return scene;
  }
  throw GenerationError("generate_scene: no arrangement met the constraints after " +
                        std::to_string(cfg.max_attempts) + " attempts (seed " + std::to_string(seed) + ")");
}

}  // namespace xpd::scene
