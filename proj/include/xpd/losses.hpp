#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xpd/net.hpp"
#include "xpd/raster.hpp"

// Training objectives: focal + dice for the instance head, RMSE for depth,
// an optional boundary term (plain or depth-guided) and a pluggable
// constraints term.
namespace xpd::losses {

enum class BoundaryLoss { kOff, kVanilla, kDgbpl };
BoundaryLoss parse_boundary_loss(const std::string& s);
std::string boundary_loss_name(BoundaryLoss b);

struct LossConfig {
  double w_focal = 1.0;
  double w_dice = 1.0;
  double w_rmse = 1.0;
  double w_boundary = 1.0;
  double w_constraints = 1.0;
  BoundaryLoss boundary = BoundaryLoss::kDgbpl;
  // MSE(W a, W b) squares the weights; false gives sum W (a - b)^2 instead.
  bool w_squared = true;
  raster::WeightMode weight_mode = raster::WeightMode::kFullField;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  void validate() const;
  nlohmann::json to_json() const;
  static LossConfig from_json(const nlohmann::json& j);
};

struct LossBreakdown {
  double focal = 0, dice = 0, rmse = 0, boundary = 0, constraints = 0, total = 0;
  nlohmann::json to_json() const;
};

// Differentiable components; undefined-free (unused slots are constant 0).
struct LossTerms {
  ag::Var focal, dice, rmse, boundary, constraints;
};

struct BaseLosses {
  ag::Var focal, dice, rmse;
  bool no_valid_depth = false;
};

// sigmoid(kernel . mask_feature) at every positive cell: (K, h, w).
ag::Var positive_masks(const net::SegOutputs& seg, const net::TrainingTargets& targets);
// GT mask of each positive cell: (K, h, w).
Tensor positive_targets(const net::TrainingTargets& targets);

BaseLosses base_task_losses(const net::SegOutputs& seg, const net::TrainingTargets& targets,
                            const net::DepthOutputs& depth, const std::vector<const DepthMap*>& depth_gt,
                            const LossConfig& cfg);

// Mean over pairs and pixels of (B_gt - B_pr)^2. pr: (K, h, w) soft masks.
ag::Var vanilla_boundary_loss(const Tensor& gt_masks, const ag::Var& pr_masks);

// Per-instance weight map from the GT mask and mask-resolution depth.
raster::WeightResult dgbpl_weights(const RealMap& gt_mask, const DepthMap& depth_at_mask_res,
                                   raster::WeightMode mode);

// Mean over pairs and pixels of W^s (B_gt - B_pr)^2 with s = 2 (w_squared) or 1.
// weights: one map per pair, shaped like the masks.
ag::Var dgbpl(const Tensor& gt_masks, const ag::Var& pr_masks, const std::vector<RealMap>& weights,
              bool w_squared = true);
// Single pair convenience form; pr_mask is (1, h, w).
ag::Var dgbpl(const RealMap& gt_mask, const ag::Var& pr_mask, const DepthMap& depth_at_mask_res,
              raster::WeightMode mode = raster::WeightMode::kFullField, bool w_squared = true);

// Boundary slot for a batch according to cfg.boundary. depth_gt holds the
// full-resolution GT depth per batch item.
ag::Var boundary_term(const net::SegOutputs& seg, const net::TrainingTargets& targets,
                      const std::vector<const DepthMap*>& depth_gt, const LossConfig& cfg);

using ConstraintsFn = std::function<ag::Var(const net::ForwardResult&, const net::TrainingTargets&)>;

struct CompositeResult {
  ag::Var total;
  LossBreakdown breakdown;
};

CompositeResult composite_loss(const LossTerms& terms, const LossConfig& cfg);

// Full objective for one batch. `constraints` may be empty (term is 0).
CompositeResult batch_loss(const net::ForwardResult& out, const net::TrainingTargets& targets,
                           const std::vector<const DepthMap*>& depth_gt, const LossConfig& cfg,
                           const ConstraintsFn& constraints = {}, bool* no_valid_depth = nullptr);

}  // namespace xpd::losses
