#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xpd/losses.hpp"
#include "xpd/net.hpp"
#include "xpd/scene.hpp"

// Run configuration shared by every CLI command. Defaults are overlaid by an
// optional JSON file, then by dotted overrides ("train.epochs=3"), then by the
// XPD_SEED environment variable. Unknown keys are rejected.
namespace xpd::config {

struct DatasetConfig {
  std::string path = "data/train";
  int num_scenes = 512;
  scene::SceneConfig scene;
  // Boundary corruption applied to the stored noisy labels (full resolution).
  int corruption_radius = 8;
  bool write_corrupted = true;
};

struct AugmentConfig {
  bool enabled = true;
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double brightness = 0.1;  // multiplicative, +/-
  double contrast = 0.1;    // about the image mean, +/-
  double noise_sigma = 0.01;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  double lr = 1e-3;
  // Epoch (0-based) from which lr is multiplied by decay_factor; -1 picks
  // 3/4 of the schedule.
  int decay_epoch = -1;
  double decay_factor = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string labels = "corrupted";  // clean | corrupted
  int max_scenes = 0;                // 0 = all
  bool eval_after = true;            // write metrics into report.json
  AugmentConfig augment;

  int resolved_decay_epoch() const { return decay_epoch >= 0 ? decay_epoch : (3 * epochs) / 4; }
};

struct EvalConfig {
  std::string path = "data/eval";
  std::string labels = "clean";  // clean | corrupted
  std::string checkpoint;
  double score_thresh = 0.3;
  double nms_iou = 0.5;
  double boundary_match_iou = 0.5;
  int boundary_dilate_px = 0;
  bool oracle = false;  // inject GT as predictions
  int max_scenes = 0;
};

struct VisualizeConfig {
  std::string scene;       // scene directory
  std::string checkpoint;  // optional; without it only GT panels are drawn
  std::string labels = "corrupted";  // labels used for the W heatmap when present
};

struct RunConfig {
  uint64_t seed = 1;
  std::string output_dir = "out";
  DatasetConfig dataset;
  net::NetConfig net;
  losses::LossConfig loss;
  TrainConfig train;
  EvalConfig eval;
  VisualizeConfig visualize;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// "a.b.c=value": value parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

RunConfig resolve(const std::optional<std::string>& file, const std::vector<std::string>& overrides,
                  bool use_env_seed = true);

nlohmann::json scene_config_to_json(const scene::SceneConfig& c);
scene::SceneConfig scene_config_from_json(const nlohmann::json& j);

// FNV-1a of a canonical JSON dump, hex.
std::string json_hash(const nlohmann::json& j);

// Identity of a run: hash of the resolved config without output_dir.
std::string run_hash(const RunConfig& c);

}  // namespace xpd::config
