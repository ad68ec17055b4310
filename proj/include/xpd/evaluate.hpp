#pragma once

#include <filesystem>

#include "xpd/config.hpp"
#include "xpd/dataset.hpp"
#include "xpd/metrics.hpp"
#include "xpd/net.hpp"

namespace xpd::evaluate {

struct EvalOptions {
  double score_thresh = 0.3;
  double nms_iou = 0.5;
  double boundary_match_iou = 0.5;
  int boundary_dilate_px = 0;
  bool corrupted_labels = false;  // evaluate against the corrupted copy
  int batch_size = 4;

  static EvalOptions from_config(const config::EvalConfig& e);
};

// Per-image predictions of a model, decoded and NMS'd.
std::vector<std::vector<net::InstancePrediction>> predict_instances(const net::XpdNet& model,
                                                                    const dataset::Dataset& data,
                                                                    const EvalOptions& opt,
                                                                    std::vector<DepthMap>* depth_out = nullptr);

metrics::MetricsReport evaluate_model(const net::XpdNet& model, const dataset::Dataset& data, const EvalOptions& opt);

// GT injected as predictions (score 1) and GT depth as the depth prediction.
metrics::MetricsReport evaluate_oracle(const dataset::Dataset& data, const EvalOptions& opt);

// `eval` command: loads dataset and checkpoint from the config, writes
// metrics.json and metrics.txt into out_dir.
metrics::MetricsReport run(const config::RunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace xpd::evaluate
