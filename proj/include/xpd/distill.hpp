#pragma once

#include <string>
#include <utility>
#include <vector>

#include "xpd/autograd.hpp"
#include "xpd/params.hpp"

// Cross-task distillation: an attention gate computed from the secondary
// task's feature decides how much of a convolved copy of that feature is
// added to the primary task's feature.
//
//   A  = sigmoid(conv1x1(F))
//   F' = A * stack(conv3x3_d(F) for d in dilation rates)
//   primary' = primary + F'
namespace xpd::distill {

enum class Variant {
  kNone,    // no message at all
  kPadNet,  // single 3x3, rate 1 feature convolution
  kXpd,     // four dilated 3x3 branches, concatenated
};

Variant parse_variant(const std::string& s);
std::string variant_name(Variant v);

inline const std::vector<int> kDefaultDilationRates{1, 3, 6, 12};

struct DistillationParams {
  Variant variant = Variant::kXpd;
  int src_channels = 0;
  int dst_channels = 0;
  std::vector<int> dilation_rates = kDefaultDilationRates;

  // (dst, src, 1, 1) and (dst).
  ag::Var attention_weight;
  ag::Var attention_bias;
  // One (weight, bias) per feature branch. kXpd: each (dst/4, src, 3, 3);
  // kPadNet: a single (dst, src, 3, 3).
  std::vector<ag::Var> feature_weights;
  std::vector<ag::Var> feature_biases;

  // Attention bias starts at 0 and all weights at fan-in uniform.
  static DistillationParams init(Variant variant, int src_channels, int dst_channels, Rng& rng);

  void validate() const;
  // Sets every kernel and bias to zero.
  void zero();
  // Registers all tensors under `prefix` in a ParamSet.
  void register_in(ParamSet& params, const std::string& prefix) const;
  std::vector<ag::Var> tensors() const;
};

ag::Var attention_map(const ag::Var& feature, const DistillationParams& params);
// The stacked convolution before gating.
ag::Var feature_stack(const ag::Var& feature, const DistillationParams& params);
ag::Var distill_message(const ag::Var& feature, const DistillationParams& params);
ag::Var merge_message(const ag::Var& primary, const ag::Var& message);

struct DualOutput {
  ag::Var seg;
  ag::Var depth;
};

// Both messages come from the pre-merge inputs:
//   seg'   = seg   + M(depth; depth_to_seg)
//   depth' = depth + M(seg;   seg_to_depth)
// A kNone side leaves its target untouched.
DualOutput dual_distill(const ag::Var& seg_feat, const ag::Var& depth_feat, const DistillationParams& seg_to_depth,
                        const DistillationParams& depth_to_seg);

}  // namespace xpd::distill
