#include "xpd/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "xpd/scene_io.hpp"

namespace xpd::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

const LabelMap& Sample::labels(bool corrupted) const {
  if (!corrupted) return scene.labels;
  if (!noisy_labels) throw PreconditionError("scene " + name + " has no corrupted labels");
  return *noisy_labels;
}

uint64_t scene_seed(uint64_t base_seed, int index) { return Rng::mix(base_seed, static_cast<uint64_t>(index)); }
uint64_t corruption_seed(uint64_t seed) { return Rng::mix(seed, 0xc0441u); }

namespace {

std::string scene_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05d", i);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out || !(out << text)) throw IoError("cannot write " + p.string());
}

}  // namespace

void generate(const fs::path& dir, const config::DatasetConfig& cfg, uint64_t seed) {
  cfg.scene.validate();
  if (cfg.num_scenes < 1) throw ConfigError("dataset.num_scenes must be >= 1");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw IoError("dataset path is not a directory: " + dir.string());
    const bool ours = fs::exists(dir / "manifest.json") || fs::exists(dir / kIncompleteMarker);
    if (!ours && !fs::is_empty(dir))
      throw ConfigError("refusing to overwrite non-dataset directory " + dir.string());
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().filename().string().rfind("scene_", 0) == 0) fs::remove_all(e.path());
    fs::remove(dir / "manifest.json");
  }
  fs::create_directories(dir);
  write_text(dir / kIncompleteMarker, "generate\n");

  json seeds = json::array(), names = json::array();
  for (int i = 0; i < cfg.num_scenes; ++i) {
    const uint64_t s = scene_seed(seed, i);
    const scene::PlanarScene sc = scene::generate_scene(s, cfg.scene);
    std::optional<LabelMap> noisy;
    if (cfg.write_corrupted) noisy = scene::corrupt_boundaries(sc.labels, cfg.corruption_radius, corruption_seed(s));
    scene::save_scene(dir / scene_name(i), sc, noisy ? &*noisy : nullptr);
    seeds.push_back(s);
    names.push_back(scene_name(i));
  }
  json desc = {{"num_scenes", cfg.num_scenes},
               {"scene", config::scene_config_to_json(cfg.scene)},
               {"corruption_radius", cfg.corruption_radius},
               {"write_corrupted", cfg.write_corrupted},
               {"seed", seed}};
  json manifest = {{"format_version", kDatasetFormatVersion},
                   {"seed", seed},
                   {"num_scenes", cfg.num_scenes},
                   {"config", desc},
                   {"config_hash", config::json_hash(desc)},
                   {"has_corrupted", cfg.write_corrupted},
                   {"scenes", names},
                   {"scene_seeds", seeds}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  fs::remove(dir / kIncompleteMarker);
}

Dataset load(const fs::path& dir, int max_scenes) {
  if (fs::exists(dir / kIncompleteMarker)) throw IoError("dataset is incomplete: " + dir.string());
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("missing dataset manifest: " + (dir / "manifest.json").string());
  Dataset d;
  d.root = dir;
  d.manifest = json::parse(in, nullptr, false);
  if (d.manifest.is_discarded() || d.manifest.value("format_version", 0) != kDatasetFormatVersion)
    throw IoError("bad dataset manifest in " + dir.string());
  std::vector<std::string> names = d.manifest.at("scenes").get<std::vector<std::string>>();
  if (max_scenes > 0 && static_cast<int>(names.size()) > max_scenes) names.resize(max_scenes);
  d.samples.resize(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    scene::LoadedScene ls = scene::load_scene(dir / names[i]);
    d.samples[i] = {names[i], std::move(ls.scene), std::move(ls.noisy_labels)};
  }
  return d;
}

AugmentDraw draw_augmentation(const config::AugmentConfig& cfg, uint64_t seed, int epoch, int index) {
  AugmentDraw d;
  if (!cfg.enabled) return d;
  Rng rng(Rng::mix(Rng::mix(seed, 0xa06u + static_cast<uint64_t>(epoch)), static_cast<uint64_t>(index)));
  d.hflip = rng.bernoulli(cfg.hflip_p);
  d.vflip = rng.bernoulli(cfg.vflip_p);
  d.brightness = 1.0 + rng.uniform(-cfg.brightness, cfg.brightness);
  d.contrast = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast);
  d.noise_seed = rng.bits();
  if (cfg.noise_sigma == 0.0) d.noise_seed = 0;
  return d;
}

TrainingItem apply_augmentation(const scene::RgbImage& rgb, const DepthMap& depth, const LabelMap& labels,
                                const AugmentDraw& d, double noise_sigma) {
  TrainingItem t{rgb, depth, labels};
  if (d.hflip) {
    t.rgb = flip_horizontal(t.rgb);
    t.depth = flip_horizontal(t.depth);
    t.labels = flip_horizontal(t.labels);
  }
  if (d.vflip) {
    t.rgb = flip_vertical(t.rgb);
    t.depth = flip_vertical(t.depth);
    t.labels = flip_vertical(t.labels);
  }
  const bool photometric = d.brightness != 1.0 || d.contrast != 1.0;
  const bool noisy = d.noise_seed != 0 && noise_sigma > 0.0;
  if (!photometric && !noisy) return t;
  scene::Rgb mean{0, 0, 0};
  for (const scene::Rgb& p : t.rgb.values())
    for (int c = 0; c < 3; ++c) mean[c] += p[c];
  for (double& m : mean) m /= static_cast<double>(t.rgb.size());
  Rng rng(d.noise_seed);
  for (scene::Rgb& p : t.rgb.values())
    for (int c = 0; c < 3; ++c) {
      double v = ((p[c] - mean[c]) * d.contrast + mean[c]) * d.brightness;
      if (noisy) v += noise_sigma * rng.normal();
      p[c] = std::clamp(v, 0.0, 1.0);
    }
  return t;
}

TrainingItem training_item(const Sample& s, bool corrupted_labels, const config::AugmentConfig& cfg, uint64_t seed,
                           int epoch, int index) {
  return apply_augmentation(s.scene.rgb, s.scene.depth, s.labels(corrupted_labels),
                            draw_augmentation(cfg, seed, epoch, index), cfg.noise_sigma);
}

}  // namespace xpd::dataset
