#include "xpd/scene_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "xpd/png_io.hpp"

namespace xpd::scene {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

io::Image8 labels_to_image(const LabelMap& labels) {
  io::Image8 img{labels.rows(), labels.cols(), 1, std::vector<uint8_t>(labels.size())};
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 255) throw IoError("label id outside 8-bit range");
    img.data[i] = static_cast<uint8_t>(labels[i]);
  }
  return img;
}

LabelMap image_to_labels(const io::Image8& img) {
  if (img.channels != 1) throw IoError("labels image must be single-channel");
  LabelMap labels(img.rows, img.cols);
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = img.data[i];
  return labels;
}

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
Vec3 json_vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

void save_scene(const fs::path& dir, const PlanarScene& scene, const LabelMap* noisy_labels) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  io::Image8 rgb{scene.rows(), scene.cols(), 3, std::vector<uint8_t>(scene.rgb.size() * 3)};
  for (size_t i = 0; i < scene.rgb.size(); ++i)
    for (int ch = 0; ch < 3; ++ch)
      rgb.data[3 * i + ch] = static_cast<uint8_t>(std::lround(std::clamp(scene.rgb[i][ch], 0.0, 1.0) * 255.0));
  io::write_png8(dir / "rgb.png", rgb);

  Grid2<uint16_t> depth_mm(scene.rows(), scene.cols());
  for (size_t i = 0; i < depth_mm.size(); ++i) {
    const double mm = std::round(scene.depth[i] * 1000.0);
    if (mm > 65535.0) throw IoError("depth beyond 65.535 m cannot be stored in depth.png");
    depth_mm[i] = static_cast<uint16_t>(std::max(mm, 0.0));
  }
  io::write_png16(dir / "depth.png", depth_mm);
  io::write_png8(dir / "labels.png", labels_to_image(scene.labels));
  if (noisy_labels) io::write_png8(dir / "labels_noisy.png", labels_to_image(*noisy_labels));

  const CameraIntrinsics& k = scene.intrinsics;
  json meta;
  meta["format_version"] = kSceneFormatVersion;
  meta["seed"] = scene.seed;
  meta["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  json planes = json::array();
  for (const PlanePrimitive& p : scene.planes) {
    json poly = json::array();
    for (const Vec3& q : p.polygon) poly.push_back(vec_json(q));
    planes.push_back({{"normal", vec_json(p.normal)}, {"offset", p.offset}, {"polygon", poly}, {"albedo", vec_json(p.albedo)}});
  }
  meta["planes"] = planes;
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

LoadedScene load_scene(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError("cannot read " + (dir / "meta.json").string());
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw IoError("malformed " + (dir / "meta.json").string() + ": " + e.what());
  }
  if (meta.value("format_version", 0) != kSceneFormatVersion)
    throw IoError("unsupported scene format_version in " + dir.string());

  LoadedScene loaded;
  PlanarScene& s = loaded.scene;
  s.seed = meta.at("seed").get<uint64_t>();
  const json& k = meta.at("intrinsics");
  s.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                  k.at("cy").get<double>(), k.at("width").get<int>(), k.at("height").get<int>()};
  for (const json& p : meta.at("planes")) {
    PlanePrimitive prim;
    prim.normal = json_vec(p.at("normal"));
    prim.offset = p.at("offset").get<double>();
    for (const json& q : p.at("polygon")) prim.polygon.push_back(json_vec(q));
    prim.albedo = json_vec(p.at("albedo"));
    s.planes.push_back(std::move(prim));
  }

  io::Image8 rgb = io::read_png8(dir / "rgb.png");
  if (rgb.channels != 3) throw IoError("rgb.png must have 3 channels: " + dir.string());
  s.rgb = RgbImage(rgb.rows, rgb.cols);
  for (size_t i = 0; i < s.rgb.size(); ++i)
    for (int ch = 0; ch < 3; ++ch) s.rgb[i][ch] = rgb.data[3 * i + ch] / 255.0;

  Grid2<uint16_t> depth_mm = io::read_png16(dir / "depth.png");
  s.depth = DepthMap(depth_mm.rows(), depth_mm.cols());
  for (size_t i = 0; i < s.depth.size(); ++i) s.depth[i] = depth_mm[i] / 1000.0;

  s.labels = image_to_labels(io::read_png8(dir / "labels.png"));
  if (fs::exists(dir / "labels_noisy.png")) loaded.noisy_labels = image_to_labels(io::read_png8(dir / "labels_noisy.png"));

  if (!s.rgb.same_shape(s.depth) || !s.depth.same_shape(s.labels) || s.rows() != s.intrinsics.height ||
      s.cols() != s.intrinsics.width)
    throw IoError("scene files disagree on image size: " + dir.string());
  return loaded;
}

}  // namespace xpd::scene
