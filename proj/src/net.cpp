#include "xpd/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

namespace xpd::net {

using nlohmann::json;

void NetConfig::validate() const {
  for (int c : {c2, c3, c4, mask_channels, depth_channels, head_channels})
    if (c <= 0) throw ConfigError("net: channel widths must be positive");
  if (groups <= 0) throw ConfigError("net: groups must be positive");
  for (int c : {c2 / 2, c2, c3, c4, head_channels}) {
    if (c % groups) throw ConfigError("net: width " + std::to_string(c) + " not divisible by groups");
  }
  if (c2 % 2) throw ConfigError("net: c2 must be even");
  if (variant == distill::Variant::kXpd && (mask_channels % 4 || depth_channels % 4))
    throw ConfigError("net: xpd distillation needs mask/depth channels divisible by 4");
  if (!(score_prior > 0 && score_prior < 1)) throw ConfigError("net: score_prior must be in (0, 1)");
  if (!(depth_prior_m > 0.02)) throw ConfigError("net: depth_prior_m must exceed 0.02");
}

json NetConfig::to_json() const {
  return json{{"c2", c2},
              {"c3", c3},
              {"c4", c4},
              {"mask_channels", mask_channels},
              {"depth_channels", depth_channels},
              {"head_channels", head_channels},
              {"groups", groups},
              {"variant", distill::variant_name(variant)},
              {"score_prior", score_prior},
              {"depth_prior_m", depth_prior_m}};
}

NetConfig NetConfig::from_json(const json& j) {
  NetConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "c2") c.c2 = it->get<int>();
    else if (k == "c3") c.c3 = it->get<int>();
    else if (k == "c4") c.c4 = it->get<int>();
    else if (k == "mask_channels") c.mask_channels = it->get<int>();
    else if (k == "depth_channels") c.depth_channels = it->get<int>();
    else if (k == "head_channels") c.head_channels = it->get<int>();
    else if (k == "groups") c.groups = it->get<int>();
    else if (k == "variant") c.variant = distill::parse_variant(it->get<std::string>());
    else if (k == "score_prior") c.score_prior = it->get<double>();
    else if (k == "depth_prior_m") c.depth_prior_m = it->get<double>();
    else throw ConfigError("net: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

Tensor SegOutputs::scores() const {
  Tensor s = score_logits.value();
  for (double& v : s.values()) v = 1.0 / (1.0 + std::exp(-v));
  return s;
}

// --- construction -------------------------------------------------------------

XpdNet::Conv XpdNet::make_conv(const std::string& name, int cin, int cout, int k, int stride, Rng& rng, bool bias) {
  Conv c;
  c.weight = params_.add(name + ".weight", fan_in_uniform(cout, cin, k, rng));
  if (bias) c.bias = params_.add(name + ".bias", Tensor({cout}));
  c.geometry = {stride, k / 2, 1};
  return c;
}

XpdNet::Norm XpdNet::make_norm(const std::string& name, int channels, double gamma_init) {
  Norm n;
  Tensor g({channels});
  g.fill(gamma_init);
  n.gamma = params_.add(name + ".gamma", std::move(g));
  n.beta = params_.add(name + ".beta", Tensor({channels}));
  n.groups = std::min(config_.groups, channels);
  return n;
}

XpdNet::ResBlock XpdNet::make_block(const std::string& name, int channels, Rng& rng) {
  ResBlock b;
  b.conv1 = make_conv(name + ".conv1", channels, channels, 3, 1, rng, false);
  b.norm1 = make_norm(name + ".norm1", channels);
  b.conv2 = make_conv(name + ".conv2", channels, channels, 3, 1, rng, false);
  // Zero gamma: every block starts as the identity.
  b.norm2 = make_norm(name + ".norm2", channels, 0.0);
  return b;
}

XpdNet::XpdNet(const NetConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const NetConfig& c = config_;

  stem1_ = make_conv("backbone.stem1", 3, c.c2 / 2, 3, 2, rng, false);
  stem1_n_ = make_norm("backbone.stem1_n", c.c2 / 2);
  stem2_ = make_conv("backbone.stem2", c.c2 / 2, c.c2, 3, 2, rng, false);
  stem2_n_ = make_norm("backbone.stem2_n", c.c2);
  res2_ = make_block("backbone.res2", c.c2, rng);
  down3_ = make_conv("backbone.down3", c.c2, c.c3, 3, 2, rng, false);
  down3_n_ = make_norm("backbone.down3_n", c.c3);
  res3_ = make_block("backbone.res3", c.c3, rng);
  down4_ = make_conv("backbone.down4", c.c3, c.c4, 3, 2, rng, false);
  down4_n_ = make_norm("backbone.down4_n", c.c4);
  res4_ = make_block("backbone.res4", c.c4, rng);

  const int E = c.mask_channels;
  lat2_ = make_conv("seg.lat2", c.c2, E, 1, 1, rng);
  lat3_ = make_conv("seg.lat3", c.c3, E, 1, 1, rng);
  lat4_ = make_conv("seg.lat4", c.c4, E, 1, 1, rng);
  mf1_ = make_conv("seg.mask_feat1", E + 2, E, 3, 1, rng);
  mf2_ = make_conv("seg.mask_feat2", E, E, 3, 1, rng);
  cat1_ = make_conv("seg.cat1", c.c4, c.head_channels, 3, 1, rng);
  cat2_ = make_conv("seg.cat2", c.head_channels, c.head_channels, 3, 1, rng);
  cat_out_ = make_conv("seg.cat_out", c.head_channels, 1, 1, 1, rng);
  cat_out_.bias.mutable_value().fill(-std::log((1.0 - c.score_prior) / c.score_prior));
  ker1_ = make_conv("seg.ker1", c.c4 + 2, c.head_channels, 3, 1, rng);
  ker2_ = make_conv("seg.ker2", c.head_channels, c.head_channels, 3, 1, rng);
  ker_out_ = make_conv("seg.ker_out", c.head_channels, E, 1, 1, rng);

  const int D = c.depth_channels;
  dl4_ = make_conv("depth.lat4", c.c4, D, 1, 1, rng);
  dl3_ = make_conv("depth.lat3", c.c3, D, 1, 1, rng);
  dl2_ = make_conv("depth.lat2", c.c2, D, 1, 1, rng);
  dc3_ = make_conv("depth.conv3", D, D, 3, 1, rng);
  dc2_ = make_conv("depth.conv2", D, D, 3, 1, rng);
  depth_out_ = make_conv("depth.out", D, 1, 3, 1, rng);
  // softplus(b) + 0.01 = depth_prior_m
  depth_out_.bias.mutable_value().fill(std::log(std::expm1(c.depth_prior_m - 0.01)));

  seg_to_depth_ = distill::DistillationParams::init(c.variant, E, D, rng);
  depth_to_seg_ = distill::DistillationParams::init(c.variant, D, E, rng);
  seg_to_depth_.register_in(params_, "distill.seg_to_depth");
  depth_to_seg_.register_in(params_, "distill.depth_to_seg");
}

// --- forward -------------------------------------------------------------------

ag::Var XpdNet::conv_norm_relu(const Conv& c, const Norm& n, const ag::Var& x) const { return ag::relu(n(c(x))); }

ag::Var XpdNet::block_forward(const ResBlock& b, const ag::Var& x) const {
  ag::Var h = conv_norm_relu(b.conv1, b.norm1, x);
  h = b.norm2(b.conv2(h));
  return ag::relu(ag::add(x, h));
}

FeaturePyramid XpdNet::backbone_forward(const ag::Var& rgb) const {
  require_rank(rgb.value(), 4, "backbone input");
  if (rgb.dim(1) != 3) throw ShapeError("backbone: expected 3 input channels, got " + shape_str(rgb.shape()));
  if (rgb.dim(2) % kGridStride || rgb.dim(3) % kGridStride)
    throw ShapeError("backbone: image size must be divisible by 16, got " + shape_str(rgb.shape()));
  // Centre and roughly whiten [0, 1] colours.
  ag::Var x = ag::scale(ag::add_const(rgb, -0.5), 4.0);
  x = conv_norm_relu(stem1_, stem1_n_, x);
  x = conv_norm_relu(stem2_, stem2_n_, x);
  FeaturePyramid p;
  p.p2 = block_forward(res2_, x);
  p.p3 = block_forward(res3_, conv_norm_relu(down3_, down3_n_, p.p2));
  p.p4 = block_forward(res4_, conv_norm_relu(down4_, down4_n_, p.p3));
  return p;
}

ag::Var XpdNet::mask_feature(const FeaturePyramid& p) const {
  ag::Var f = lat2_(p.p2);
  f = ag::add(f, ag::upsample_nearest(lat3_(p.p3), 2));
  f = ag::add(f, ag::upsample_nearest(lat4_(p.p4), 4));
  f = ag::relu(mf1_(ag::append_coords(f)));
  return mf2_(f);
}

SegOutputs XpdNet::seg_head_forward(const FeaturePyramid& p, const ag::Var& distilled_mask_feature) const {
  require_rank(distilled_mask_feature.value(), 4, "seg head mask feature");
  if (distilled_mask_feature.dim(1) != config_.mask_channels ||
      distilled_mask_feature.dim(2) != p.p2.dim(2) || distilled_mask_feature.dim(3) != p.p2.dim(3))
    throw ShapeError("seg head: mask feature shape " + shape_str(distilled_mask_feature.shape()));
  SegOutputs out;
  ag::Var c = ag::relu(cat1_(p.p4));
  c = ag::relu(cat2_(c));
  out.score_logits = cat_out_(c);
  ag::Var k = ag::relu(ker1_(ag::append_coords(p.p4)));
  k = ag::relu(ker2_(k));
  out.kernels = ker_out_(k);
  out.mask_feature = distilled_mask_feature;
  return out;
}

ag::Var XpdNet::depth_aggregate(const FeaturePyramid& p) const {
  ag::Var x = dl4_(p.p4);
  x = ag::relu(dc3_(ag::add(ag::upsample_nearest(x, 2), dl3_(p.p3))));
  x = ag::relu(dc2_(ag::add(ag::upsample_nearest(x, 2), dl2_(p.p2))));
  return x;
}

ag::Var XpdNet::depth_head(const ag::Var& merged) const {
  require_rank(merged.value(), 4, "depth head input");
  if (merged.dim(1) != config_.depth_channels) throw ShapeError("depth head: wrong channel count");
  ag::Var d = ag::upsample_bilinear(depth_out_(merged), kMaskStride);
  return ag::add_const(ag::softplus(d), 0.01);
}

DepthOutputs XpdNet::depth_decoder_forward(const FeaturePyramid& p,
                                           const std::function<ag::Var(const ag::Var&)>& hook) const {
  DepthOutputs out;
  out.aggregated_feature = depth_aggregate(p);
  out.depth = depth_head(hook ? hook(out.aggregated_feature) : out.aggregated_feature);
  return out;
}

ForwardResult XpdNet::forward(const ag::Var& rgb) const {
  FeaturePyramid p = backbone_forward(rgb);
  ag::Var seg_feat = mask_feature(p);
  ag::Var depth_feat = depth_aggregate(p);
  distill::DualOutput dual = distill::dual_distill(seg_feat, depth_feat, seg_to_depth_, depth_to_seg_);
  ForwardResult r;
  r.seg = seg_head_forward(p, dual.seg);
  r.depth.aggregated_feature = depth_feat;
  r.depth.depth = depth_head(dual.depth);
  return r;
}

std::string XpdNet::architecture_hash() const {
  json desc = config_.to_json();
  desc.erase("score_prior");
  desc.erase("depth_prior_m");
  std::string s = desc.dump();
  for (size_t i = 0; i < params_.size(); ++i) s += "|" + params_.names()[i] + shape_str(params_.vars()[i].shape());
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Tensor rgb_batch(const std::vector<const scene::RgbImage*>& images) {
  if (images.empty()) throw PreconditionError("rgb_batch: no images");
  const int H = images[0]->rows(), W = images[0]->cols();
  Tensor t({static_cast<int64_t>(images.size()), 3, H, W});
  for (size_t n = 0; n < images.size(); ++n) {
    const scene::RgbImage& img = *images[n];
    if (img.rows() != H || img.cols() != W) throw ShapeError("rgb_batch: images differ in size");
    for (int c = 0; c < 3; ++c)
      for (int r = 0; r < H; ++r)
        for (int q = 0; q < W; ++q) t.at(n, c, r, q) = img(r, q)[c];
  }
  return t;
}

// --- targets -------------------------------------------------------------------

RealMap instance_mask(const LabelMap& labels, int label, int stride) {
  if (stride <= 0 || labels.rows() % stride || labels.cols() % stride)
    throw ShapeError("instance_mask: label map not divisible by stride");
  const int h = labels.rows() / stride, w = labels.cols() / stride;
  RealMap m(h, w, 0.0);
  const int need = (stride * stride + 1) / 2;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int n = 0;
      for (int i = 0; i < stride; ++i)
        for (int j = 0; j < stride; ++j) n += labels(r * stride + i, c * stride + j) == label;
      m(r, c) = n >= need ? 1.0 : 0.0;
    }
  return m;
}

namespace {

struct InstanceStats {
  double sx = 0, sy = 0;
  int64_t n = 0;
  int x0 = std::numeric_limits<int>::max(), y0 = std::numeric_limits<int>::max(), x1 = -1, y1 = -1;
};

}  // namespace

TrainingTargets assign_targets(const std::vector<const LabelMap*>& labels, int grid_rows, int grid_cols) {
  if (labels.empty()) throw PreconditionError("assign_targets: empty batch");
  if (grid_rows <= 0 || grid_cols <= 0) throw ShapeError("assign_targets: empty grid");
  TrainingTargets t;
  const int N = static_cast<int>(labels.size());
  t.cell_targets = Tensor({N, 1, grid_rows, grid_cols});
  for (int b = 0; b < N; ++b) {
    const LabelMap& lab = *labels[b];
    const double cell_h = static_cast<double>(lab.rows()) / grid_rows;
    const double cell_w = static_cast<double>(lab.cols()) / grid_cols;
    std::map<int, InstanceStats> stats;
    for (int r = 0; r < lab.rows(); ++r)
      for (int c = 0; c < lab.cols(); ++c) {
        const int id = lab(r, c);
        if (id <= 0) continue;
        InstanceStats& s = stats[id];
        s.sx += c + 0.5;
        s.sy += r + 0.5;
        ++s.n;
        s.x0 = std::min(s.x0, c);
        s.y0 = std::min(s.y0, r);
        s.x1 = std::max(s.x1, c + 1);
        s.y1 = std::max(s.y1, r + 1);
      }
    // Owner and its normalized distance per cell.
    std::vector<int> owner(static_cast<size_t>(grid_rows) * grid_cols, -1);
    std::vector<double> best(owner.size(), std::numeric_limits<double>::infinity());
    for (const auto& [id, s] : stats) {
      RealMap mask = instance_mask(lab, id);
      bool any = false;
      for (double v : mask.values()) any = any || v > 0;
      if (!any) continue;  // too thin to survive at mask resolution
      const int idx = static_cast<int>(t.instances.size());
      t.instances.push_back({b, id, std::move(mask)});
      const double cx = s.sx / s.n, cy = s.sy / s.n;
      const double bw = s.x1 - s.x0, bh = s.y1 - s.y0;
      auto claim = [&](int r, int c) {
        const double px = (c + 0.5) * cell_w, py = (r + 0.5) * cell_h;
        const double d = std::max(std::abs(px - cx) / bw, std::abs(py - cy) / bh);
        const size_t k = static_cast<size_t>(r) * grid_cols + c;
        if (d < best[k]) {
          best[k] = d;
          owner[k] = idx;
        }
      };
      bool claimed = false;
      for (int r = 0; r < grid_rows; ++r)
        for (int c = 0; c < grid_cols; ++c) {
          const double px = (c + 0.5) * cell_w, py = (r + 0.5) * cell_h;
          if (std::abs(px - cx) <= 0.2 * bw && std::abs(py - cy) <= 0.2 * bh) {
            claim(r, c);
            claimed = true;
          }
        }
      if (!claimed)
        claim(std::clamp(static_cast<int>(cy / cell_h), 0, grid_rows - 1),
              std::clamp(static_cast<int>(cx / cell_w), 0, grid_cols - 1));
    }
    for (int r = 0; r < grid_rows; ++r)
      for (int c = 0; c < grid_cols; ++c) {
        const int o = owner[static_cast<size_t>(r) * grid_cols + c];
        if (o < 0) continue;
        t.cell_targets.at(b, 0, r, c) = 1.0;
        t.positive_cells.push_back({b, r, c});
        t.positive_instance.push_back(o);
      }
  }
  return t;
}

// --- inference -------------------------------------------------------------------

BoolMap binarize(const RealMap& mask) {
  BoolMap b(mask.rows(), mask.cols(), 0);
  for (size_t i = 0; i < mask.values().size(); ++i) b.values()[i] = mask.values()[i] >= 0.5;
  return b;
}

Box mask_box(const RealMap& mask, int stride) {
  int x0 = mask.cols(), y0 = mask.rows(), x1 = -1, y1 = -1;
  for (int r = 0; r < mask.rows(); ++r)
    for (int c = 0; c < mask.cols(); ++c)
      if (mask(r, c) >= 0.5) {
        x0 = std::min(x0, c);
        y0 = std::min(y0, r);
        x1 = std::max(x1, c + 1);
        y1 = std::max(y1, r + 1);
      }
  if (x1 < 0) return {};
  return {static_cast<double>(x0 * stride), static_cast<double>(y0 * stride), static_cast<double>(x1 * stride),
          static_cast<double>(y1 * stride)};
}

namespace {

double binary_iou(const BoolMap& a, const BoolMap& b) {
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.values().size(); ++i) {
    inter += a.values()[i] && b.values()[i];
    uni += a.values()[i] || b.values()[i];
  }
  return uni ? static_cast<double>(inter) / uni : 0.0;
}

}  // namespace

std::vector<InstancePrediction> mask_nms(std::vector<InstancePrediction> candidates, double nms_iou) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const InstancePrediction& a, const InstancePrediction& b) { return a.score > b.score; });
  std::vector<InstancePrediction> kept;
  std::vector<BoolMap> kept_bin;
  for (InstancePrediction& c : candidates) {
    BoolMap bin = binarize(c.mask);
    if (std::none_of(bin.values().begin(), bin.values().end(), [](uint8_t v) { return v != 0; })) continue;
    bool suppressed = false;
    for (const BoolMap& k : kept_bin)
      if (binary_iou(bin, k) > nms_iou) {
        suppressed = true;
        break;
      }
    if (suppressed) continue;
    kept_bin.push_back(std::move(bin));
    kept.push_back(std::move(c));
  }
  return kept;
}

std::vector<InstancePrediction> assemble_instances(const SegOutputs& seg, int batch_index, double score_thresh,
                                                   double nms_iou) {
  const Tensor scores = seg.scores();
  if (batch_index < 0 || batch_index >= scores.dim(0)) throw PreconditionError("assemble_instances: bad batch index");
  const int Sr = static_cast<int>(scores.dim(2)), Sc = static_cast<int>(scores.dim(3));
  std::vector<ag::CellRef> cells;
  std::vector<double> cell_scores;
  for (int r = 0; r < Sr; ++r)
    for (int c = 0; c < Sc; ++c) {
      const double s = scores.at(batch_index, 0, r, c);
      if (s >= score_thresh) {
        cells.push_back({batch_index, r, c});
        cell_scores.push_back(s);
      }
    }
  if (cells.empty()) return {};
  Tensor logits;
  {
    ag::NoGradGuard guard;
    logits = ag::dynamic_masks(seg.kernels, seg.mask_feature, cells).value();
  }
  const int h = static_cast<int>(logits.dim(1)), w = static_cast<int>(logits.dim(2));
  std::vector<InstancePrediction> cands(cells.size());
  for (size_t k = 0; k < cells.size(); ++k) {
    RealMap m(h, w);
    for (int i = 0; i < h * w; ++i) m.values()[i] = 1.0 / (1.0 + std::exp(-logits[static_cast<int64_t>(k) * h * w + i]));
    cands[k].box = mask_box(m);
    cands[k].mask = std::move(m);
    cands[k].score = cell_scores[k];
  }
  return mask_nms(std::move(cands), nms_iou);
}

}  // namespace xpd::net
