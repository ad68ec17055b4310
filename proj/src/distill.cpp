#include "xpd/distill.hpp"

#include <algorithm>

namespace xpd::distill {

Variant parse_variant(const std::string& s) {
  if (s == "none") return Variant::kNone;
  if (s == "pad_net") return Variant::kPadNet;
  if (s == "xpd") return Variant::kXpd;
  throw ConfigError("unknown distillation variant '" + s + "' (expected none|pad_net|xpd)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kNone:
      return "none";
    case Variant::kPadNet:
      return "pad_net";
    case Variant::kXpd:
      return "xpd";
  }
  return "?";
}

DistillationParams DistillationParams::init(Variant variant, int src_channels, int dst_channels, Rng& rng) {
  DistillationParams p;
  p.variant = variant;
  p.src_channels = src_channels;
  p.dst_channels = dst_channels;
  p.validate();
  if (variant == Variant::kNone) return p;
  p.attention_weight = ag::Var(fan_in_uniform(dst_channels, src_channels, 1, rng), true);
  p.attention_bias = ag::Var(Tensor({dst_channels}), true);
  if (variant == Variant::kXpd) {
    for (size_t i = 0; i < p.dilation_rates.size(); ++i) {
      p.feature_weights.emplace_back(fan_in_uniform(dst_channels / 4, src_channels, 3, rng), true);
      p.feature_biases.emplace_back(Tensor({dst_channels / 4}), true);
    }
  } else {
    p.feature_weights.emplace_back(fan_in_uniform(dst_channels, src_channels, 3, rng), true);
    p.feature_biases.emplace_back(Tensor({dst_channels}), true);
  }
  return p;
}

void DistillationParams::validate() const {
  if (src_channels <= 0 || dst_channels <= 0) throw ConfigError("distillation: channel counts must be positive");
  if (variant == Variant::kXpd) {
    if (dst_channels % 4) throw ConfigError("distillation: xpd needs destination channels divisible by 4");
    if (dilation_rates.size() != 4) throw ConfigError("distillation: xpd uses four dilation rates");
    for (size_t i = 0; i < dilation_rates.size(); ++i) {
      if (dilation_rates[i] < 1) throw ConfigError("distillation: dilation rates must be >= 1");
      if (i && dilation_rates[i] <= dilation_rates[i - 1])
        throw ConfigError("distillation: dilation rates must be strictly increasing");
    }
  }
  for (const ag::Var& v : tensors())
    if (v.defined() && !v.value().all_finite()) throw DomainError("distillation: non-finite parameter");
}

void DistillationParams::zero() {
  for (ag::Var& v : tensors()) v.mutable_value().fill(0.0);
}

std::vector<ag::Var> DistillationParams::tensors() const {
  std::vector<ag::Var> out;
  if (variant == Variant::kNone) return out;
  out.push_back(attention_weight);
  out.push_back(attention_bias);
  for (size_t i = 0; i < feature_weights.size(); ++i) {
    out.push_back(feature_weights[i]);
    out.push_back(feature_biases[i]);
  }
  return out;
}

void DistillationParams::register_in(ParamSet& params, const std::string& prefix) const {
  if (variant == Variant::kNone) return;
  params.adopt(prefix + ".attn.weight", attention_weight);
  params.adopt(prefix + ".attn.bias", attention_bias);
  for (size_t i = 0; i < feature_weights.size(); ++i) {
    const std::string b = prefix + ".feat" + std::to_string(i);
    params.adopt(b + ".weight", feature_weights[i]);
    params.adopt(b + ".bias", feature_biases[i]);
  }
}

namespace {

void check_input(const ag::Var& feature, const DistillationParams& p) {
  require_rank(feature.value(), 4, "distillation input");
  if (feature.dim(1) != p.src_channels)
    throw ShapeError("distillation: feature has " + std::to_string(feature.dim(1)) + " channels, expected " +
                     std::to_string(p.src_channels));
}

}  // namespace

ag::Var attention_map(const ag::Var& feature, const DistillationParams& p) {
  check_input(feature, p);
  if (p.variant == Variant::kNone) throw ConfigError("attention_map: variant none has no attention");
  return ag::sigmoid(ag::conv2d(feature, p.attention_weight, &p.attention_bias, {1, 0, 1}));
}

ag::Var feature_stack(const ag::Var& feature, const DistillationParams& p) {
  check_input(feature, p);
  if (p.variant == Variant::kPadNet)
    return ag::conv2d(feature, p.feature_weights[0], &p.feature_biases[0], {1, 1, 1});
  std::vector<ag::Var> branches;
  for (size_t i = 0; i < p.feature_weights.size(); ++i) {
    const int rate = p.dilation_rates[i];
    // padding = rate keeps the spatial size for a 3x3 kernel.
    branches.push_back(ag::conv2d(feature, p.feature_weights[i], &p.feature_biases[i], {1, rate, rate}));
  }
  return ag::concat_channels(branches);
}

ag::Var distill_message(const ag::Var& feature, const DistillationParams& p) {
  check_input(feature, p);
  p.validate();
  if (p.variant == Variant::kNone)
    return ag::constant(Tensor({feature.dim(0), p.dst_channels, feature.dim(2), feature.dim(3)}));
  return ag::mul(attention_map(feature, p), feature_stack(feature, p));
}

ag::Var merge_message(const ag::Var& primary, const ag::Var& message) { return ag::add(primary, message); }

DualOutput dual_distill(const ag::Var& seg_feat, const ag::Var& depth_feat, const DistillationParams& seg_to_depth,
                        const DistillationParams& depth_to_seg) {
  require_rank(seg_feat.value(), 4, "dual_distill seg");
  require_rank(depth_feat.value(), 4, "dual_distill depth");
  if (seg_feat.dim(0) != depth_feat.dim(0) || seg_feat.dim(2) != depth_feat.dim(2) ||
      seg_feat.dim(3) != depth_feat.dim(3))
    throw ShapeError("dual_distill: features at different resolutions " + shape_str(seg_feat.shape()) + " vs " +
                     shape_str(depth_feat.shape()));
  DualOutput out{seg_feat, depth_feat};
  if (depth_to_seg.variant != Variant::kNone)
    out.seg = merge_message(seg_feat, distill_message(depth_feat, depth_to_seg));
  if (seg_to_depth.variant != Variant::kNone)
    out.depth = merge_message(depth_feat, distill_message(seg_feat, seg_to_depth));
  return out;
}

}  // namespace xpd::distill
