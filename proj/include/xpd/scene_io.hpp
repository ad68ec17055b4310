#pragma once

#include <filesystem>
#include <optional>

#include "xpd/scene.hpp"

// One directory per scene:
//   rgb.png          8-bit RGB
//   depth.png        16-bit gray, millimetres, 0 = invalid
//   labels.png       8-bit gray instance ids
//   labels_noisy.png optional corrupted ids (same format)
//   meta.json        intrinsics, planes, seed, format_version = 1
namespace xpd::scene {

inline constexpr int kSceneFormatVersion = 1;

void save_scene(const std::filesystem::path& dir, const PlanarScene& scene,
                const LabelMap* noisy_labels = nullptr);

struct LoadedScene {
  PlanarScene scene;
  std::optional<LabelMap> noisy_labels;
};
LoadedScene load_scene(const std::filesystem::path& dir);

}  // namespace xpd::scene
