#include "xpd/losses.hpp"

#include <cmath>

namespace xpd::losses {

using nlohmann::json;

BoundaryLoss parse_boundary_loss(const std::string& s) {
  if (s == "off") return BoundaryLoss::kOff;
  if (s == "vanilla") return BoundaryLoss::kVanilla;
  if (s == "dgbpl") return BoundaryLoss::kDgbpl;
  throw ConfigError("unknown boundary loss '" + s + "' (expected off|vanilla|dgbpl)");
}

std::string boundary_loss_name(BoundaryLoss b) {
  switch (b) {
    case BoundaryLoss::kOff:
      return "off";
    case BoundaryLoss::kVanilla:
      return "vanilla";
    case BoundaryLoss::kDgbpl:
      return "dgbpl";
  }
  return "?";
}

void LossConfig::validate() const {
  for (double w : {w_focal, w_dice, w_rmse, w_boundary, w_constraints})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  if (!(focal_alpha >= 0.0 && focal_alpha <= 1.0)) throw ConfigError("focal_alpha must be in [0, 1]");
  if (!(focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be >= 0");
}

json LossConfig::to_json() const {
  return json{{"w_focal", w_focal},
              {"w_dice", w_dice},
              {"w_rmse", w_rmse},
              {"w_boundary", w_boundary},
              {"w_constraints", w_constraints},
              {"boundary", boundary_loss_name(boundary)},
              {"w_squared", w_squared},
              {"weight_mode", weight_mode == raster::WeightMode::kFullField ? "full_field" : "gt_band_only"},
              {"focal_alpha", focal_alpha},
              {"focal_gamma", focal_gamma}};
}

LossConfig LossConfig::from_json(const json& j) {
  LossConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "w_focal") c.w_focal = it->get<double>();
    else if (k == "w_dice") c.w_dice = it->get<double>();
    else if (k == "w_rmse") c.w_rmse = it->get<double>();
    else if (k == "w_boundary") c.w_boundary = it->get<double>();
    else if (k == "w_constraints") c.w_constraints = it->get<double>();
    else if (k == "boundary") c.boundary = parse_boundary_loss(it->get<std::string>());
    else if (k == "w_squared") c.w_squared = it->get<bool>();
    else if (k == "weight_mode") {
      const std::string m = it->get<std::string>();
      if (m == "full_field") c.weight_mode = raster::WeightMode::kFullField;
      else if (m == "gt_band_only") c.weight_mode = raster::WeightMode::kGtBandOnly;
      else throw ConfigError("unknown weight_mode '" + m + "'");
    } else if (k == "focal_alpha") c.focal_alpha = it->get<double>();
    else if (k == "focal_gamma") c.focal_gamma = it->get<double>();
    else throw ConfigError("loss: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

json LossBreakdown::to_json() const {
  return json{{"focal", focal}, {"dice", dice},         {"rmse", rmse},
              {"boundary", boundary}, {"constraints", constraints}, {"total", total}};
}

ag::Var positive_masks(const net::SegOutputs& seg, const net::TrainingTargets& targets) {
  return ag::sigmoid(ag::dynamic_masks(seg.kernels, seg.mask_feature, targets.positive_cells));
}

Tensor positive_targets(const net::TrainingTargets& targets) {
  if (targets.instances.empty()) return Tensor({0, 0, 0});
  const int h = targets.instances[0].mask.rows(), w = targets.instances[0].mask.cols();
  Tensor t({targets.num_positive(), h, w});
  for (int k = 0; k < targets.num_positive(); ++k) {
    const RealMap& m = targets.instances[targets.positive_instance[k]].mask;
    std::copy(m.values().begin(), m.values().end(), t.data() + static_cast<int64_t>(k) * h * w);
  }
  return t;
}

namespace {

void check_depth_batch(const net::DepthOutputs& depth, const std::vector<const DepthMap*>& depth_gt) {
  const Tensor& d = depth.depth.value();
  if (static_cast<int64_t>(depth_gt.size()) != d.dim(0)) throw ShapeError("losses: depth GT batch size mismatch");
  for (const DepthMap* g : depth_gt)
    if (g->rows() != d.dim(2) || g->cols() != d.dim(3)) throw ShapeError("losses: depth GT size mismatch");
}

}  // namespace

BaseLosses base_task_losses(const net::SegOutputs& seg, const net::TrainingTargets& targets,
                            const net::DepthOutputs& depth, const std::vector<const DepthMap*>& depth_gt,
                            const LossConfig& cfg) {
  require_same_shape(seg.score_logits.value(), targets.cell_targets, "focal targets");
  check_depth_batch(depth, depth_gt);
  BaseLosses out;
  const double normalizer = std::max(1, targets.num_positive());
  out.focal = ag::focal_loss(seg.score_logits, targets.cell_targets, cfg.focal_alpha, cfg.focal_gamma, normalizer);
  if (targets.num_positive() > 0)
    out.dice = ag::dice_loss(positive_masks(seg, targets), positive_targets(targets));
  else
    out.dice = ag::scalar(0.0);

  const Tensor& d = depth.depth.value();
  Tensor gt(d.shape()), valid(d.shape());
  const int64_t plane = d.dim(2) * d.dim(3);
  int64_t n_valid = 0;
  for (size_t b = 0; b < depth_gt.size(); ++b) {
    const auto& vals = depth_gt[b]->values();
    for (int64_t i = 0; i < plane; ++i) {
      const double g = vals[i];
      gt[b * plane + i] = g;
      if (g > 0.0) {
        valid[b * plane + i] = 1.0;
        ++n_valid;
      }
    }
  }
  out.no_valid_depth = n_valid == 0;
  out.rmse = ag::rmse_loss(depth.depth, gt, valid);
  return out;
}

ag::Var vanilla_boundary_loss(const Tensor& gt_masks, const ag::Var& pr_masks) {
  require_rank(gt_masks, 3, "vanilla_boundary_loss gt");
  require_same_shape(gt_masks, pr_masks.value(), "vanilla_boundary_loss");
  if (gt_masks.dim(0) == 0) return ag::scalar(0.0);
  const Tensor gt_b = ag::laplacian_boundary(ag::constant(gt_masks)).value();
  Tensor ones(gt_masks.shape());
  ones.fill(1.0);
  return ag::weighted_boundary_mse(ag::laplacian_boundary(pr_masks), gt_b, ones, false);
}

raster::WeightResult dgbpl_weights(const RealMap& gt_mask, const DepthMap& depth_at_mask_res,
                                   raster::WeightMode mode) {
  if (!gt_mask.same_shape(depth_at_mask_res)) throw ShapeError("dgbpl: mask and depth shapes differ");
  const raster::GradientMask g = raster::sobel_gradient_mask(depth_at_mask_res);
  const RealMap std_map = raster::windowed_std_map(g, 3);
  return raster::normalize_weights(std_map, raster::laplacian_boundary(gt_mask), mode);
}

ag::Var dgbpl(const Tensor& gt_masks, const ag::Var& pr_masks, const std::vector<RealMap>& weights, bool w_squared) {
  require_rank(gt_masks, 3, "dgbpl gt");
  require_same_shape(gt_masks, pr_masks.value(), "dgbpl");
  const int64_t K = gt_masks.dim(0);
  if (static_cast<int64_t>(weights.size()) != K) throw ShapeError("dgbpl: one weight map per pair expected");
  if (K == 0) return ag::scalar(0.0);
  const int64_t plane = gt_masks.dim(1) * gt_masks.dim(2);
  Tensor w(gt_masks.shape());
  for (int64_t k = 0; k < K; ++k) {
    if (weights[k].rows() != gt_masks.dim(1) || weights[k].cols() != gt_masks.dim(2))
      throw ShapeError("dgbpl: weight map shape mismatch");
    std::copy(weights[k].values().begin(), weights[k].values().end(), w.data() + k * plane);
  }
  const Tensor gt_b = ag::laplacian_boundary(ag::constant(gt_masks)).value();
  return ag::weighted_boundary_mse(ag::laplacian_boundary(pr_masks), gt_b, w, w_squared);
}

ag::Var dgbpl(const RealMap& gt_mask, const ag::Var& pr_mask, const DepthMap& depth_at_mask_res,
              raster::WeightMode mode, bool w_squared) {
  Tensor gt({1, gt_mask.rows(), gt_mask.cols()});
  std::copy(gt_mask.values().begin(), gt_mask.values().end(), gt.data());
  return dgbpl(gt, pr_mask, {dgbpl_weights(gt_mask, depth_at_mask_res, mode).weights}, w_squared);
}

ag::Var boundary_term(const net::SegOutputs& seg, const net::TrainingTargets& targets,
                      const std::vector<const DepthMap*>& depth_gt, const LossConfig& cfg) {
  if (cfg.boundary == BoundaryLoss::kOff || targets.num_positive() == 0) return ag::scalar(0.0);
  const ag::Var pr = positive_masks(seg, targets);
  const Tensor gt = positive_targets(targets);
  if (cfg.boundary == BoundaryLoss::kVanilla) return vanilla_boundary_loss(gt, pr);

  std::vector<DepthMap> pooled;
  for (const DepthMap* d : depth_gt) pooled.push_back(raster::pool_depth(*d, net::kMaskStride));
  std::vector<RealMap> per_instance;
  for (const net::InstanceTarget& inst : targets.instances)
    per_instance.push_back(dgbpl_weights(inst.mask, pooled.at(inst.batch), cfg.weight_mode).weights);
  std::vector<RealMap> per_pair;
  per_pair.reserve(targets.num_positive());
  for (int idx : targets.positive_instance) per_pair.push_back(per_instance[idx]);
  return dgbpl(gt, pr, per_pair, cfg.w_squared);
}

CompositeResult composite_loss(const LossTerms& terms, const LossConfig& cfg) {
  cfg.validate();
  auto value_of = [](const ag::Var& v) { return v.defined() ? v.value()[0] : 0.0; };
  auto or_zero = [](const ag::Var& v) { return v.defined() ? v : ag::scalar(0.0); };
  CompositeResult r;
  r.breakdown.focal = value_of(terms.focal);
  r.breakdown.dice = value_of(terms.dice);
  r.breakdown.rmse = value_of(terms.rmse);
  r.breakdown.boundary = value_of(terms.boundary);
  r.breakdown.constraints = value_of(terms.constraints);
  r.total = ag::scale(or_zero(terms.focal), cfg.w_focal);
  r.total = ag::add(r.total, ag::scale(or_zero(terms.dice), cfg.w_dice));
  r.total = ag::add(r.total, ag::scale(or_zero(terms.rmse), cfg.w_rmse));
  r.total = ag::add(r.total, ag::scale(or_zero(terms.boundary), cfg.w_boundary));
  r.total = ag::add(r.total, ag::scale(or_zero(terms.constraints), cfg.w_constraints));
  r.breakdown.total = r.total.value()[0];
  return r;
}

CompositeResult batch_loss(const net::ForwardResult& out, const net::TrainingTargets& targets,
                           const std::vector<const DepthMap*>& depth_gt, const LossConfig& cfg,
                           const ConstraintsFn& constraints, bool* no_valid_depth) {
  BaseLosses base = base_task_losses(out.seg, targets, out.depth, depth_gt, cfg);
  if (no_valid_depth) *no_valid_depth = base.no_valid_depth;
  LossTerms t;
  t.focal = base.focal;
  t.dice = base.dice;
  t.rmse = base.rmse;
  t.boundary = boundary_term(out.seg, targets, depth_gt, cfg);
  t.constraints = constraints ? constraints(out, targets) : ag::scalar(0.0);
  return composite_loss(t, cfg);
}

}  // namespace xpd::losses
