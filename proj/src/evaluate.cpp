#include "xpd/evaluate.hpp"

#include <fstream>

#include "xpd/checkpoint.hpp"

namespace xpd::evaluate {

namespace fs = std::filesystem;
using nlohmann::json;

EvalOptions EvalOptions::from_config(const config::EvalConfig& e) {
  EvalOptions o;
  o.score_thresh = e.score_thresh;
  o.nms_iou = e.nms_iou;
  o.boundary_match_iou = e.boundary_match_iou;
  o.boundary_dilate_px = e.boundary_dilate_px;
  o.corrupted_labels = e.labels == "corrupted";
  return o;
}

std::vector<std::vector<net::InstancePrediction>> predict_instances(const net::XpdNet& model,
                                                                    const dataset::Dataset& data,
                                                                    const EvalOptions& opt,
                                                                    std::vector<DepthMap>* depth_out) {
  ag::NoGradGuard guard;
  std::vector<std::vector<net::InstancePrediction>> out;
  if (depth_out) depth_out->clear();
  const size_t n = data.samples.size();
  const size_t bs = static_cast<size_t>(std::max(1, opt.batch_size));
  for (size_t start = 0; start < n; start += bs) {
    std::vector<const scene::RgbImage*> imgs;
    for (size_t i = start; i < std::min(n, start + bs); ++i) imgs.push_back(&data.samples[i].scene.rgb);
    const net::ForwardResult fr = model.forward(ag::constant(net::rgb_batch(imgs)));
    const Tensor& d = fr.depth.depth.value();
    for (size_t k = 0; k < imgs.size(); ++k) {
      out.push_back(net::assemble_instances(fr.seg, static_cast<int>(k), opt.score_thresh, opt.nms_iou));
      if (depth_out) {
        DepthMap dm(static_cast<int>(d.dim(2)), static_cast<int>(d.dim(3)));
        std::copy(d.data() + k * dm.size(), d.data() + (k + 1) * dm.size(), dm.values().begin());
        depth_out->push_back(std::move(dm));
      }
    }
  }
  return out;
}

namespace {

metrics::MetricsReport finish(const std::vector<metrics::ImageInstances>& images, const metrics::DepthAccumulator& acc,
                              const dataset::Dataset& data, const EvalOptions& opt) {
  metrics::MetricsReport r = metrics::evaluate_instances(images, opt.boundary_match_iou, opt.boundary_dilate_px);
  r.depth = acc.result();
  r.metadata["score_thresh"] = opt.score_thresh;
  r.metadata["nms_iou"] = opt.nms_iou;
  r.metadata["eval_labels"] = opt.corrupted_labels ? "corrupted" : "clean";
  r.metadata["dataset_hash"] = data.manifest.value("config_hash", "");
  if (!r.depth) r.metadata["depth_warning"] = "no valid depth pixels";
  return r;
}

}  // namespace

metrics::MetricsReport evaluate_model(const net::XpdNet& model, const dataset::Dataset& data, const EvalOptions& opt) {
  std::vector<DepthMap> depth;
  const auto preds = predict_instances(model, data, opt, &depth);
  std::vector<metrics::ImageInstances> images(data.samples.size());
  metrics::DepthAccumulator acc;
  for (size_t i = 0; i < data.samples.size(); ++i) {
    const dataset::Sample& s = data.samples[i];
    images[i].gt = metrics::gt_instances(s.labels(opt.corrupted_labels));
    for (const auto& p : preds[i]) images[i].pred.push_back(metrics::to_pred(p));
    acc.add(depth[i], s.scene.depth);
  }
  metrics::MetricsReport r = finish(images, acc, data, opt);
  r.metadata["architecture_hash"] = model.architecture_hash();
  r.metadata["variant"] = distill::variant_name(model.config().variant);
  return r;
}

metrics::MetricsReport evaluate_oracle(const dataset::Dataset& data, const EvalOptions& opt) {
  std::vector<metrics::ImageInstances> images(data.samples.size());
  metrics::DepthAccumulator acc;
  for (size_t i = 0; i < data.samples.size(); ++i) {
    const dataset::Sample& s = data.samples[i];
    images[i].gt = metrics::gt_instances(s.labels(opt.corrupted_labels));
    for (const auto& g : images[i].gt) images[i].pred.push_back({g.mask, g.box, 1.0});
    acc.add(s.scene.depth, s.scene.depth);
  }
  metrics::MetricsReport r = finish(images, acc, data, opt);
  r.metadata["mode"] = "oracle";
  return r;
}

metrics::MetricsReport run(const config::RunConfig& cfg, const fs::path& out_dir) {
  const EvalOptions opt = EvalOptions::from_config(cfg.eval);
  if (!cfg.eval.oracle && cfg.eval.checkpoint.empty()) throw ConfigError("eval.checkpoint is required");
  std::unique_ptr<net::XpdNet> model;
  if (!cfg.eval.oracle) {
    // The configured architecture must match the checkpoint's.
    model = std::make_unique<net::XpdNet>(cfg.net, 0);
    const json manifest = checkpoint::read_manifest(cfg.eval.checkpoint);
    const std::string stored = manifest.value("architecture_hash", "");
    if (stored != model->architecture_hash())
      throw checkpoint::MismatchError("checkpoint architecture hash " + stored + " != configured " +
                                      model->architecture_hash());
    checkpoint::load_into(cfg.eval.checkpoint, *model);
  }
  const dataset::Dataset data = dataset::load(cfg.eval.path, cfg.eval.max_scenes);
  if (opt.corrupted_labels && !data.manifest.value("has_corrupted", false))
    throw ConfigError("eval.labels=corrupted but the dataset has no corrupted labels");
  metrics::MetricsReport r = model ? evaluate_model(*model, data, opt) : evaluate_oracle(data, opt);
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "metrics.json") << r.to_json().dump(2) << "\n";
  std::ofstream(out_dir / "metrics.txt") << r.table();
  return r;
}

}  // namespace xpd::evaluate
