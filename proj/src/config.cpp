#include "xpd/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace xpd::config {

using nlohmann::json;

namespace {

template <class F>
void for_keys(const json& j, const std::string& where, F&& handle) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!handle(it.key(), *it)) throw ConfigError("unknown config key '" + where + "." + it.key() + "'");
}

void check_labels(const std::string& v, const char* what) {
  if (v != "clean" && v != "corrupted") throw ConfigError(std::string(what) + " must be clean|corrupted");
}

}  // namespace

json scene_config_to_json(const scene::SceneConfig& c) {
  return json{{"height", c.height},
              {"width", c.width},
              {"layout", c.layout == scene::Layout::kRoom ? "room" : "fronto_stack"},
              {"num_planes", {c.num_planes.min, c.num_planes.max}},
              {"depth_m", {c.depth_m.min, c.depth_m.max}},
              {"min_coverage", c.min_coverage},
              {"max_attempts", c.max_attempts}};
}

scene::SceneConfig scene_config_from_json(const json& j) {
  scene::SceneConfig c;
  for_keys(j, "dataset.scene", [&](const std::string& k, const json& v) {
    if (k == "height") c.height = v.get<int>();
    else if (k == "width") c.width = v.get<int>();
    else if (k == "layout") {
      const std::string s = v.get<std::string>();
      if (s == "room") c.layout = scene::Layout::kRoom;
      else if (s == "fronto_stack") c.layout = scene::Layout::kFrontoStack;
      else throw ConfigError("dataset.scene.layout must be room|fronto_stack");
    } else if (k == "num_planes") {
      c.num_planes.min = v.at(0).get<int>();
      c.num_planes.max = v.at(1).get<int>();
    } else if (k == "depth_m") {
      c.depth_m.min = v.at(0).get<double>();
      c.depth_m.max = v.at(1).get<double>();
    } else if (k == "min_coverage") c.min_coverage = v.get<double>();
    else if (k == "max_attempts") c.max_attempts = v.get<int>();
    else return false;
    return true;
  });
  return c;
}

void RunConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  dataset.scene.validate();
  if (dataset.scene.height % net::kGridStride || dataset.scene.width % net::kGridStride)
    throw ConfigError("dataset.scene height and width must be divisible by 16");
  if (dataset.num_scenes < 1) throw ConfigError("dataset.num_scenes must be >= 1");
  if (dataset.corruption_radius < 0) throw ConfigError("dataset.corruption_radius must be >= 0");
  if (2 * dataset.corruption_radius > std::min(dataset.scene.height, dataset.scene.width))
    throw ConfigError("dataset.corruption_radius too large for the image");
  net.validate();
  loss.validate();
  if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(train.lr > 0)) throw ConfigError("train.lr must be > 0");
  if (!(train.decay_factor > 0 && train.decay_factor <= 1)) throw ConfigError("train.decay_factor must be in (0, 1]");
  if (!(train.adam_beta1 >= 0 && train.adam_beta1 < 1 && train.adam_beta2 >= 0 && train.adam_beta2 < 1))
    throw ConfigError("train.adam betas must be in [0, 1)");
  if (!(train.adam_eps > 0)) throw ConfigError("train.adam_eps must be > 0");
  if (train.max_scenes < 0) throw ConfigError("train.max_scenes must be >= 0");
  check_labels(train.labels, "train.labels");
  const AugmentConfig& a = train.augment;
  for (double p : {a.hflip_p, a.vflip_p})
    if (!(p >= 0 && p <= 1)) throw ConfigError("train.augment flip probabilities must be in [0, 1]");
  if (!(a.brightness >= 0 && a.brightness < 1 && a.contrast >= 0 && a.contrast < 1 && a.noise_sigma >= 0))
    throw ConfigError("train.augment magnitudes out of range");
  check_labels(eval.labels, "eval.labels");
  for (double t : {eval.score_thresh, eval.nms_iou, eval.boundary_match_iou})
    if (!(t > 0 && t < 1)) throw ConfigError("eval thresholds must be in (0, 1)");
  if (eval.boundary_dilate_px < 0) throw ConfigError("eval.boundary_dilate_px must be >= 0");
  if (eval.max_scenes < 0) throw ConfigError("eval.max_scenes must be >= 0");
  check_labels(visualize.labels, "visualize.labels");
}

json RunConfig::to_json() const {
  const AugmentConfig& a = train.augment;
  return json{
      {"seed", seed},
      {"output_dir", output_dir},
      {"dataset",
       {{"path", dataset.path},
        {"num_scenes", dataset.num_scenes},
        {"scene", scene_config_to_json(dataset.scene)},
        {"corruption_radius", dataset.corruption_radius},
        {"write_corrupted", dataset.write_corrupted}}},
      {"net", net.to_json()},
      {"loss", loss.to_json()},
      {"train",
       {{"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"lr", train.lr},
        {"decay_epoch", train.decay_epoch},
        {"decay_factor", train.decay_factor},
        {"adam_beta1", train.adam_beta1},
        {"adam_beta2", train.adam_beta2},
        {"adam_eps", train.adam_eps},
        {"labels", train.labels},
        {"max_scenes", train.max_scenes},
        {"eval_after", train.eval_after},
        {"augment",
         {{"enabled", a.enabled},
          {"hflip_p", a.hflip_p},
          {"vflip_p", a.vflip_p},
          {"brightness", a.brightness},
          {"contrast", a.contrast},
          {"noise_sigma", a.noise_sigma}}}}},
      {"eval",
       {{"path", eval.path},
        {"labels", eval.labels},
        {"checkpoint", eval.checkpoint},
        {"score_thresh", eval.score_thresh},
        {"nms_iou", eval.nms_iou},
        {"boundary_match_iou", eval.boundary_match_iou},
        {"boundary_dilate_px", eval.boundary_dilate_px},
        {"oracle", eval.oracle},
        {"max_scenes", eval.max_scenes}}},
      {"visualize",
       {{"scene", visualize.scene}, {"checkpoint", visualize.checkpoint}, {"labels", visualize.labels}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  for_keys(j, "config", [&](const std::string& k, const json& v) {
    if (k == "seed") c.seed = v.get<uint64_t>();
    else if (k == "output_dir") c.output_dir = v.get<std::string>();
    else if (k == "dataset") {
      for_keys(v, "dataset", [&](const std::string& k2, const json& v2) {
        if (k2 == "path") c.dataset.path = v2.get<std::string>();
        else if (k2 == "num_scenes") c.dataset.num_scenes = v2.get<int>();
        else if (k2 == "scene") c.dataset.scene = scene_config_from_json(v2);
        else if (k2 == "corruption_radius") c.dataset.corruption_radius = v2.get<int>();
        else if (k2 == "write_corrupted") c.dataset.write_corrupted = v2.get<bool>();
        else return false;
        return true;
      });
    } else if (k == "net") c.net = net::NetConfig::from_json(v);
    else if (k == "loss") c.loss = losses::LossConfig::from_json(v);
    else if (k == "train") {
      TrainConfig& t = c.train;
      for_keys(v, "train", [&](const std::string& k2, const json& v2) {
        if (k2 == "epochs") t.epochs = v2.get<int>();
        else if (k2 == "batch_size") t.batch_size = v2.get<int>();
        else if (k2 == "lr") t.lr = v2.get<double>();
        else if (k2 == "decay_epoch") t.decay_epoch = v2.get<int>();
        else if (k2 == "decay_factor") t.decay_factor = v2.get<double>();
        else if (k2 == "adam_beta1") t.adam_beta1 = v2.get<double>();
        else if (k2 == "adam_beta2") t.adam_beta2 = v2.get<double>();
        else if (k2 == "adam_eps") t.adam_eps = v2.get<double>();
        else if (k2 == "labels") t.labels = v2.get<std::string>();
        else if (k2 == "max_scenes") t.max_scenes = v2.get<int>();
        else if (k2 == "eval_after") t.eval_after = v2.get<bool>();
        else if (k2 == "augment") {
          AugmentConfig& a = t.augment;
          for_keys(v2, "train.augment", [&](const std::string& k3, const json& v3) {
            if (k3 == "enabled") a.enabled = v3.get<bool>();
            else if (k3 == "hflip_p") a.hflip_p = v3.get<double>();
            else if (k3 == "vflip_p") a.vflip_p = v3.get<double>();
            else if (k3 == "brightness") a.brightness = v3.get<double>();
            else if (k3 == "contrast") a.contrast = v3.get<double>();
            else if (k3 == "noise_sigma") a.noise_sigma = v3.get<double>();
            else return false;
            return true;
          });
        } else return false;
        return true;
      });
    } else if (k == "eval") {
      EvalConfig& e = c.eval;
      for_keys(v, "eval", [&](const std::string& k2, const json& v2) {
        if (k2 == "path") e.path = v2.get<std::string>();
        else if (k2 == "labels") e.labels = v2.get<std::string>();
        else if (k2 == "checkpoint") e.checkpoint = v2.get<std::string>();
        else if (k2 == "score_thresh") e.score_thresh = v2.get<double>();
        else if (k2 == "nms_iou") e.nms_iou = v2.get<double>();
        else if (k2 == "boundary_match_iou") e.boundary_match_iou = v2.get<double>();
        else if (k2 == "boundary_dilate_px") e.boundary_dilate_px = v2.get<int>();
        else if (k2 == "oracle") e.oracle = v2.get<bool>();
        else if (k2 == "max_scenes") e.max_scenes = v2.get<int>();
        else return false;
        return true;
      });
    } else if (k == "visualize") {
      VisualizeConfig& z = c.visualize;
      for_keys(v, "visualize", [&](const std::string& k2, const json& v2) {
        if (k2 == "scene") z.scene = v2.get<std::string>();
        else if (k2 == "checkpoint") z.checkpoint = v2.get<std::string>();
        else if (k2 == "labels") z.labels = v2.get<std::string>();
        else return false;
        return true;
      });
    } else return false;
    return true;
  });
  c.validate();
  return c;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &j;
  size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty path segment");
    if (!node->is_object() || !node->contains(key)) throw ConfigError("override targets unknown key '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

RunConfig resolve(const std::optional<std::string>& file, const std::vector<std::string>& overrides,
                  bool use_env_seed) {
  json j = RunConfig{}.to_json();
  try {
    if (file) {
      std::ifstream in(*file);
      if (!in) throw ConfigError("cannot read config file " + *file);
      json user = json::parse(in, nullptr, false);
      if (user.is_discarded()) throw ConfigError("config file " + *file + " is not valid JSON");
      // Merge so that omitted keys keep their defaults; unknown keys survive
      // the merge and are rejected by from_json.
      j.merge_patch(user);
    }
    for (const std::string& o : overrides) apply_override(j, o);
    if (use_env_seed) {
      if (const char* s = std::getenv("XPD_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(s, &end, 10);
        if (!*s || *end) throw ConfigError("XPD_SEED must be a non-negative integer");
        j["seed"] = static_cast<uint64_t>(v);
      }
    }
    return RunConfig::from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
}

std::string json_hash(const json& j) {
  const std::string s = j.dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string run_hash(const RunConfig& c) {
  // Where a run is written does not change what it computes.
  json j = c.to_json();
  j.erase("output_dir");
  return json_hash(j);
}

}  // namespace xpd::config
