#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xpd/net.hpp"

namespace xpd::metrics {

// |a ∩ b| / |a ∪ b|; two empty masks give 1.
double mask_iou(const BoolMap& a, const BoolMap& b);
// Same convention for boxes (two empty boxes give 1).
double box_iou(const net::Box& a, const net::Box& b);

struct GtInstance {
  BoolMap mask;
  net::Box box;
};

struct PredInstance {
  BoolMap mask;
  net::Box box;
  double score = 0;
};

struct ImageInstances {
  std::vector<GtInstance> gt;
  std::vector<PredInstance> pred;
};

// GT instances of a label map at mask resolution (ids > 0, empty masks dropped).
std::vector<GtInstance> gt_instances(const LabelMap& labels, int stride = net::kMaskStride);
PredInstance to_pred(const net::InstancePrediction& p);

std::vector<double> coco_thresholds();  // 0.50, 0.55, ..., 0.95

// Greedy matching of one image at one threshold. Predictions are visited by
// descending score (ties keep input order); each takes the unmatched GT of
// highest IoU >= t (ties: lowest index). Returns per-prediction TP flags in
// visiting order, with the visiting order itself.
struct ImageMatch {
  std::vector<int> order;
  std::vector<bool> tp;
};
ImageMatch match_image(const ImageInstances& img, double threshold, bool box_mode);

// 101-point interpolated AP for each threshold; nullopt when the dataset has
// no GT instance.
std::vector<std::optional<double>> average_precision(const std::vector<ImageInstances>& images,
                                                     const std::vector<double>& thresholds, bool box_mode);

struct ApSummary {
  std::optional<double> ap, ap50, ap75;
};
ApSummary summarize_ap(const std::vector<ImageInstances>& images, bool box_mode);

// Per-image boundary statistic: sum of matched-pair boundary IoUs and the GT count.
struct BoundaryIouStats {
  double pair_sum = 0;
  int num_gt = 0;
  int num_matched = 0;
};
BoundaryIouStats boundary_iou_image(const ImageInstances& img, double match_iou = 0.5, int dilate_px = 0);
// Boundary set IoU of one pair.
double boundary_pair_iou(const BoolMap& gt, const BoolMap& pred, int dilate_px = 0);
// GT-weighted mean over images; nullopt without GT.
std::optional<double> boundary_iou(const std::vector<ImageInstances>& images, double match_iou = 0.5,
                                   int dilate_px = 0);

struct DepthMetrics {
  double rel = 0, log10 = 0, rms = 0, delta1 = 0, delta2 = 0, delta3 = 0;
};

// Accumulates pixel statistics across images; the dataset value pools all
// valid pixels.
class DepthAccumulator {
 public:
  void add(const DepthMap& pred, const DepthMap& gt);
  std::optional<DepthMetrics> result() const;
  int64_t count() const { return n_; }

 private:
  double rel_ = 0, log10_ = 0, sq_ = 0;
  int64_t d1_ = 0, d2_ = 0, d3_ = 0, n_ = 0;
};

// valid: pixels with gt > 0 (and, if given, valid != 0).
std::optional<DepthMetrics> depth_metrics(const DepthMap& pred, const DepthMap& gt, const BoolMap* valid = nullptr);

struct MetricsReport {
  ApSummary mask_ap, box_ap;
  std::optional<double> boundary_iou;
  std::optional<DepthMetrics> depth;
  int num_images = 0;
  int num_gt = 0;
  int num_pred = 0;
  nlohmann::json metadata = nlohmann::json::object();

  nlohmann::json to_json() const;
  std::string table() const;
};

MetricsReport evaluate_instances(const std::vector<ImageInstances>& images, double match_iou = 0.5,
                                 int dilate_px = 0);

}  // namespace xpd::metrics
