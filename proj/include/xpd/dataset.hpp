#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xpd/config.hpp"
#include "xpd/scene.hpp"

// On-disk synthetic datasets: one scene directory per sample plus a
// manifest.json, and the augmentation applied during training.
namespace xpd::dataset {

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr const char* kIncompleteMarker = ".incomplete";

struct Sample {
  std::string name;
  scene::PlanarScene scene;
  std::optional<LabelMap> noisy_labels;

  // Clean labels, or the corrupted copy when requested (must exist).
  const LabelMap& labels(bool corrupted) const;
};

struct Dataset {
  std::filesystem::path root;
  nlohmann::json manifest;
  std::vector<Sample> samples;
};

uint64_t scene_seed(uint64_t base_seed, int index);
uint64_t corruption_seed(uint64_t scene_seed);

// Writes cfg.num_scenes scenes into `dir` (replacing a previous dataset
// there). Refuses a non-empty directory that is not a dataset.
void generate(const std::filesystem::path& dir, const config::DatasetConfig& cfg, uint64_t seed);

// Loads at most max_scenes scenes (0 = all).
Dataset load(const std::filesystem::path& dir, int max_scenes = 0);

// --- augmentation -----------------------------------------------------------

template <class T>
Grid2<T> flip_horizontal(const Grid2<T>& g) {
  Grid2<T> out(g.rows(), g.cols());
  for (int r = 0; r < g.rows(); ++r)
    for (int c = 0; c < g.cols(); ++c) out(r, g.cols() - 1 - c) = g(r, c);
  return out;
}

template <class T>
Grid2<T> flip_vertical(const Grid2<T>& g) {
  Grid2<T> out(g.rows(), g.cols());
  for (int r = 0; r < g.rows(); ++r)
    for (int c = 0; c < g.cols(); ++c) out(g.rows() - 1 - r, c) = g(r, c);
  return out;
}

struct TrainingItem {
  scene::RgbImage rgb;
  DepthMap depth;
  LabelMap labels;
};

struct AugmentDraw {
  bool hflip = false, vflip = false;
  double brightness = 1.0, contrast = 1.0;
  uint64_t noise_seed = 0;
};

// Draws are a pure function of (seed, epoch, index).
AugmentDraw draw_augmentation(const config::AugmentConfig& cfg, uint64_t seed, int epoch, int index);
// Flips apply to rgb, depth and labels alike; photometric changes and noise to rgb only.
TrainingItem apply_augmentation(const scene::RgbImage& rgb, const DepthMap& depth, const LabelMap& labels,
                                const AugmentDraw& draw, double noise_sigma);

TrainingItem training_item(const Sample& s, bool corrupted_labels, const config::AugmentConfig& cfg, uint64_t seed,
                           int epoch, int index);

}  // namespace xpd::dataset
