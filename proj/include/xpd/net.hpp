#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xpd/distill.hpp"
#include "xpd/params.hpp"
#include "xpd/scene.hpp"

// Toy dual-branch network: a small residual backbone shared by a SOLO-style
// plane-instance head and a top-down depth decoder, coupled by a pair of
// distillation modules at stride 4.
namespace xpd::net {

inline constexpr int kMaskStride = 4;
inline constexpr int kGridStride = 16;

struct NetConfig {
  int c2 = 64;   // stride-4 backbone width
  int c3 = 128;  // stride 8
  int c4 = 256;  // stride 16
  int mask_channels = 32;   // E: unified mask feature / dynamic kernel length
  int depth_channels = 64;  // aggregated depth feature
  int head_channels = 128;  // category / kernel branch width
  int groups = 8;           // group-norm groups
  distill::Variant variant = distill::Variant::kXpd;
  double score_prior = 0.01;   // initial plane-ness probability
  double depth_prior_m = 3.0;  // initial depth output

  void validate() const;
  nlohmann::json to_json() const;
  static NetConfig from_json(const nlohmann::json& j);
};

struct FeaturePyramid {
  ag::Var p2, p3, p4;
};

struct SegOutputs {
  ag::Var score_logits;  // (N, 1, Sr, Sc)
  ag::Var kernels;       // (N, E, Sr, Sc)
  ag::Var mask_feature;  // (N, E, H/4, W/4), after distillation

  Tensor scores() const;  // sigmoid of the logits
};

struct DepthOutputs {
  ag::Var depth;               // (N, 1, H, W) metres, > 0
  ag::Var aggregated_feature;  // (N, D, H/4, W/4), before distillation
};

struct ForwardResult {
  SegOutputs seg;
  DepthOutputs depth;
};

class XpdNet {
 public:
  XpdNet(const NetConfig& config, uint64_t seed);

  const NetConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  distill::DistillationParams& seg_to_depth() { return seg_to_depth_; }
  distill::DistillationParams& depth_to_seg() { return depth_to_seg_; }
  const distill::DistillationParams& seg_to_depth() const { return seg_to_depth_; }
  const distill::DistillationParams& depth_to_seg() const { return depth_to_seg_; }

  // rgb: (N, 3, H, W) in [0, 1]; H and W divisible by 16.
  FeaturePyramid backbone_forward(const ag::Var& rgb) const;
  // Unified mask feature before distillation.
  ag::Var mask_feature(const FeaturePyramid& pyramid) const;
  SegOutputs seg_head_forward(const FeaturePyramid& pyramid, const ag::Var& distilled_mask_feature) const;
  // Top-down aggregation P4 -> P3 -> P2 before distillation.
  ag::Var depth_aggregate(const FeaturePyramid& pyramid) const;
  ag::Var depth_head(const ag::Var& merged_feature) const;
  // Aggregates, passes the feature through `hook` (identity if empty), then
  // runs the depth head.
  DepthOutputs depth_decoder_forward(const FeaturePyramid& pyramid,
                                     const std::function<ag::Var(const ag::Var&)>& hook = {}) const;

  ForwardResult forward(const ag::Var& rgb) const;

  // Stable identifier of the architecture (config + parameter names/shapes).
  std::string architecture_hash() const;

 private:
  struct Conv {
    ag::Var weight, bias;
    kernels::ConvGeometry geometry;
    ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias.defined() ? &bias : nullptr, geometry); }
  };
  struct Norm {
    ag::Var gamma, beta;
    int groups = 1;
    ag::Var operator()(const ag::Var& x) const { return ag::group_norm(x, gamma, beta, groups); }
  };
  struct ResBlock {
    Conv conv1, conv2;
    Norm norm1, norm2;
  };

  Conv make_conv(const std::string& name, int cin, int cout, int k, int stride, Rng& rng, bool bias = true);
  Norm make_norm(const std::string& name, int channels, double gamma_init = 1.0);
  ResBlock make_block(const std::string& name, int channels, Rng& rng);
  ag::Var conv_norm_relu(const Conv& c, const Norm& n, const ag::Var& x) const;
  ag::Var block_forward(const ResBlock& b, const ag::Var& x) const;

  NetConfig config_;
  ParamSet params_;

  Conv stem1_, stem2_, down3_, down4_;
  Norm stem1_n_, stem2_n_, down3_n_, down4_n_;
  ResBlock res2_, res3_, res4_;

  Conv lat2_, lat3_, lat4_, mf1_, mf2_;
  Conv cat1_, cat2_, cat_out_, ker1_, ker2_, ker_out_;

  Conv dl2_, dl3_, dl4_, dc3_, dc2_, depth_out_;

  distill::DistillationParams seg_to_depth_;
  distill::DistillationParams depth_to_seg_;
};

// (N, 3, H, W) batch from scene images.
Tensor rgb_batch(const std::vector<const scene::RgbImage*>& images);

// --- ground-truth assignment ------------------------------------------------

struct InstanceTarget {
  int batch = 0;
  int label = 0;
  RealMap mask;  // binary, mask resolution
};

struct TrainingTargets {
  Tensor cell_targets;                      // (N, 1, Sr, Sc), 1 on positive cells
  std::vector<InstanceTarget> instances;    // one per assigned GT instance
  std::vector<ag::CellRef> positive_cells;  // every positive cell
  std::vector<int> positive_instance;       // index into `instances` per positive cell
  int num_positive() const { return static_cast<int>(positive_cells.size()); }
};

// Binarized instance masks at mask resolution (block coverage >= 0.5).
RealMap instance_mask(const LabelMap& labels, int label, int stride = kMaskStride);

// Centre-region rule: an instance owns every grid cell whose centre falls in
// centroid +/- 0.2 * bounding-box extent; if none does, the cell containing
// the centroid. Contested cells go to the instance whose centre is closest in
// box-normalized Chebyshev distance.
TrainingTargets assign_targets(const std::vector<const LabelMap*>& labels, int grid_rows, int grid_cols);

// --- inference ----------------------------------------------------------------

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open, full-resolution pixels
  double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
  bool operator==(const Box&) const = default;
};

struct InstancePrediction {
  RealMap mask;  // soft, mask resolution
  double score = 0;
  Box box;
};

// Tight box of the pixels >= 0.5, scaled by `stride`; empty box when none.
Box mask_box(const RealMap& mask, int stride = kMaskStride);
BoolMap binarize(const RealMap& mask);

// Greedy NMS on binarized-mask IoU, highest score first. Candidates with an
// empty binarized mask are dropped.
std::vector<InstancePrediction> mask_nms(std::vector<InstancePrediction> candidates, double nms_iou);

std::vector<InstancePrediction> assemble_instances(const SegOutputs& seg, int batch_index, double score_thresh,
                                                   double nms_iou);

}  // namespace xpd::net
