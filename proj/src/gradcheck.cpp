#include "xpd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "xpd/distill.hpp"
#include "xpd/losses.hpp"
#include "xpd/net.hpp"
#include "xpd/scene.hpp"

namespace xpd::gradcheck {

using nlohmann::json;

json CheckResult::to_json() const {
  return json{{"name", name}, {"max_rel_error", max_rel_error}, {"tolerance", tolerance},
              {"probes", probes}, {"passed", passed}};
}

CheckResult check_gradient(const std::string& name, const std::function<ag::Var()>& f,
                           const std::vector<ag::Var>& inputs, double tolerance, const ProbeOptions& opt) {
  for (ag::Var v : inputs) {
    if (!v.requires_grad()) throw PreconditionError("gradcheck " + name + ": input does not require grad");
    v.zero_grad();
  }
  ag::backward(f());
  Rng rng(opt.seed);
  struct Probe {
    double analytic, numeric;
  };
  std::vector<Probe> probes;
  for (ag::Var v : inputs) {
    const Tensor g = v.grad();
    const int64_t n = v.value().numel();
    std::vector<int64_t> idx;
    if (n <= opt.per_input) {
      for (int64_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      while (static_cast<int>(idx.size()) < opt.per_input) {
        const int64_t i = static_cast<int64_t>(rng.bits() % static_cast<uint64_t>(n));
        if (std::find(idx.begin(), idx.end(), i) == idx.end()) idx.push_back(i);
      }
    }
    for (int64_t i : idx) {
      Tensor& t = v.mutable_value();
      const double saved = t[i];
      double up, down;
      {
        ag::NoGradGuard guard;
        t[i] = saved + opt.step;
        up = f().value()[0];
        t[i] = saved - opt.step;
        down = f().value()[0];
      }
      t[i] = saved;
      probes.push_back({g[i] * (1.0 + opt.fault), (up - down) / (2.0 * opt.step)});
    }
  }
  double scale = 0.0;
  for (const Probe& p : probes) scale = std::max(scale, std::abs(p.numeric));
  CheckResult r{name, 0.0, tolerance, static_cast<int64_t>(probes.size()), false};
  for (const Probe& p : probes) {
    const double denom = std::max({std::abs(p.analytic), std::abs(p.numeric), 1e-3 * scale, 1e-9});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(p.analytic - p.numeric) / denom);
  }
  r.passed = std::isfinite(r.max_rel_error) && r.max_rel_error < tolerance;
  return r;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

namespace {

Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(s);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

ag::Var leaf(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return ag::Var(random_tensor(s, rng, lo, hi), true);
}

std::vector<ag::Var> with(std::vector<ag::Var> a, const std::vector<ag::Var>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<ag::Var> params_with_prefix(const ParamSet& ps, const std::vector<std::string>& prefixes) {
  std::vector<ag::Var> out;
  for (size_t i = 0; i < ps.size(); ++i)
    for (const std::string& p : prefixes)
      if (ps.names()[i].rfind(p, 0) == 0) {
        out.push_back(ps.vars()[i]);
        break;
      }
  return out;
}

net::NetConfig tiny_config(distill::Variant v) {
  net::NetConfig c;
  c.c2 = 8;
  c.c3 = 8;
  c.c4 = 16;
  c.mask_channels = 8;
  c.depth_channels = 8;
  c.head_channels = 8;
  c.groups = 4;
  c.variant = v;
  return c;
}

// Two fronto-parallel-ish planes meeting at a crease plus a depth step, at mask resolution.
void two_plane_fixture(int h, int w, RealMap& gt_mask, DepthMap& depth) {
  gt_mask = RealMap(h, w, 0.0);
  depth = DepthMap(h, w, 0.0);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const bool inside = c >= w / 3 && r >= h / 4;
      gt_mask(r, c) = inside ? 1.0 : 0.0;
      depth(r, c) = inside ? 2.0 + 0.05 * r : 3.0 + 0.02 * c;
    }
}

}  // namespace

std::vector<CheckResult> run_all(const SuiteOptions& opt) {
  std::vector<CheckResult> out;
  Rng rng(opt.seed);
  ProbeOptions po;
  po.seed = Rng::mix(opt.seed, 1);

  // Attention gate alone.
  {
    auto p = distill::DistillationParams::init(distill::Variant::kXpd, 6, 8, rng);
    p.attention_bias.mutable_value() = random_tensor({8}, rng, -0.5, 0.5);
    ag::Var F = leaf({1, 6, 7, 7}, rng);
    const Tensor R = random_tensor({1, 8, 7, 7}, rng);
    out.push_back(check_gradient(
        "attention_map", [&] { return ag::dot_const(distill::attention_map(F, p), R); },
        {F, p.attention_weight, p.attention_bias}, kLocalTolerance, po));
  }
  // Message per variant.
  for (distill::Variant v : {distill::Variant::kPadNet, distill::Variant::kXpd}) {
    auto p = distill::DistillationParams::init(v, 6, 8, rng);
    for (ag::Var b : p.feature_biases) b.mutable_value() = random_tensor(b.shape(), rng, -0.2, 0.2);
    ag::Var F = leaf({1, 6, 14, 14}, rng);
    const Tensor R = random_tensor({1, 8, 14, 14}, rng);
    out.push_back(check_gradient(
        "distill_message[" + distill::variant_name(v) + "]",
        [&] { return ag::dot_const(distill::distill_message(F, p), R); }, with({F}, p.tensors()), kLocalTolerance,
        po));
  }
  // Both directions at once.
  {
    auto s2d = distill::DistillationParams::init(distill::Variant::kXpd, 8, 12, rng);
    auto d2s = distill::DistillationParams::init(distill::Variant::kXpd, 12, 8, rng);
    ag::Var S = leaf({2, 8, 8, 8}, rng), D = leaf({2, 12, 8, 8}, rng);
    const Tensor Rs = random_tensor({2, 8, 8, 8}, rng), Rd = random_tensor({2, 12, 8, 8}, rng);
    out.push_back(check_gradient(
        "dual_distill",
        [&] {
          auto o = distill::dual_distill(S, D, s2d, d2s);
          return ag::add(ag::dot_const(o.seg, Rs), ag::dot_const(o.depth, Rd));
        },
        with(with({S, D}, s2d.tensors()), d2s.tensors()), kLocalTolerance, po));
  }
  // Heads on a 32x32 image with a frozen backbone.
  {
    net::XpdNet model(tiny_config(distill::Variant::kXpd), Rng::mix(opt.seed, 2));
    const Tensor img = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
    net::FeaturePyramid pyr;
    ag::Var mf_value;
    {
      ag::NoGradGuard guard;
      pyr = model.backbone_forward(ag::constant(img));
      mf_value = model.mask_feature(pyr);
    }
    ag::Var mf(mf_value.value(), true);
    const Tensor Rs = random_tensor({1, 1, 2, 2}, rng), Rk = random_tensor({1, 8, 2, 2}, rng);
    out.push_back(check_gradient(
        "seg_head",
        [&] {
          net::SegOutputs s = model.seg_head_forward(pyr, mf);
          return ag::add(ag::dot_const(s.score_logits, Rs), ag::dot_const(s.kernels, Rk));
        },
        params_with_prefix(model.params(), {"seg.cat", "seg.ker"}), kLocalTolerance, po));
    // Dynamic masks through the distilled mask feature as well.
    const std::vector<ag::CellRef> cells{{0, 0, 0}, {0, 1, 1}};
    const Tensor Rm = random_tensor({2, 8, 8}, rng);
    out.push_back(check_gradient(
        "dynamic_masks",
        [&] {
          net::SegOutputs s = model.seg_head_forward(pyr, mf);
          return ag::dot_const(ag::sigmoid(ag::dynamic_masks(s.kernels, s.mask_feature, cells)), Rm);
        },
        with({mf}, params_with_prefix(model.params(), {"seg.ker"})), kLocalTolerance, po));
    const Tensor Rd = random_tensor({1, 1, 32, 32}, rng);
    out.push_back(check_gradient(
        "depth_decoder",
        [&] { return ag::dot_const(model.depth_decoder_forward(pyr).depth, Rd); },
        params_with_prefix(model.params(), {"depth."}), kLocalTolerance, po));
  }
  // Boundary losses on soft masks.
  {
    RealMap gt_mask;
    DepthMap depth;
    two_plane_fixture(12, 12, gt_mask, depth);
    Tensor gt({2, 12, 12});
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 144; ++i) gt[k * 144 + i] = k == 0 ? gt_mask[i] : 1.0 - gt_mask[i];
    ag::Var X = leaf({2, 12, 12}, rng, -2.0, 2.0);
    out.push_back(check_gradient(
        "vanilla_boundary_loss", [&] { return losses::vanilla_boundary_loss(gt, ag::sigmoid(X)); }, {X},
        kLocalTolerance, po));
    RealMap inv(12, 12);
    for (int i = 0; i < 144; ++i) inv[i] = 1.0 - gt_mask[i];
    const std::vector<RealMap> w{losses::dgbpl_weights(gt_mask, depth, raster::WeightMode::kFullField).weights,
                                 losses::dgbpl_weights(inv, depth, raster::WeightMode::kFullField).weights};
    out.push_back(check_gradient(
        "dgbpl", [&] { return losses::dgbpl(gt, ag::sigmoid(X), w, true); }, {X}, kLocalTolerance, po));
    out.push_back(check_gradient(
        "dgbpl[w_linear]", [&] { return losses::dgbpl(gt, ag::sigmoid(X), w, false); }, {X}, kLocalTolerance, po));
  }
  // Base task terms and the weighted composite.
  {
    ag::Var logits = leaf({2, 1, 3, 3}, rng, -2.0, 2.0);
    Tensor cell_t({2, 1, 3, 3});
    cell_t[1] = cell_t[9] = cell_t[13] = 1.0;
    ag::Var M = leaf({2, 6, 6}, rng, -2.0, 2.0);
    Tensor mt({2, 6, 6});
    for (int i = 0; i < 72; ++i) mt[i] = (i % 6) < 3 ? 1.0 : 0.0;
    ag::Var Dp = leaf({1, 1, 6, 6}, rng, 0.5, 3.0);
    const Tensor Dg = random_tensor({1, 1, 6, 6}, rng, 0.5, 3.0);
    Tensor valid({1, 1, 6, 6}, 1.0);
    valid[0] = valid[7] = 0.0;
    out.push_back(check_gradient(
        "focal_dice_rmse",
        [&] {
          return ag::add(ag::add(ag::focal_loss(logits, cell_t, 0.25, 2.0, 3.0), ag::dice_loss(ag::sigmoid(M), mt)),
                         ag::rmse_loss(Dp, Dg, valid));
        },
        {logits, M, Dp}, kLocalTolerance, po));
    losses::LossConfig cfg;
    cfg.w_focal = 0.7;
    cfg.w_dice = 1.3;
    cfg.w_rmse = 0.5;
    cfg.w_boundary = 2.0;
    cfg.w_constraints = 0.25;
    out.push_back(check_gradient(
        "composite",
        [&] {
          losses::LossTerms t;
          t.focal = ag::focal_loss(logits, cell_t, 0.25, 2.0, 3.0);
          t.dice = ag::dice_loss(ag::sigmoid(M), mt);
          t.rmse = ag::rmse_loss(Dp, Dg, valid);
          t.boundary = losses::vanilla_boundary_loss(mt, ag::sigmoid(M));
          t.constraints = ag::mean_all(ag::mul(Dp, Dp));
          return losses::composite_loss(t, cfg).total;
        },
        {logits, M, Dp}, kLocalTolerance, po));
  }
  // Whole network and full objective on a 32x32 scene.
  {
    scene::SceneConfig sc;
    sc.height = 32;
    sc.width = 32;
    sc.num_planes = {3, 5};
    const scene::PlanarScene s = scene::generate_scene(Rng::mix(opt.seed, 3), sc);
    net::XpdNet model(tiny_config(distill::Variant::kXpd), Rng::mix(opt.seed, 4));
    // Zero-initialized residual gammas put relu(x + 0) exactly on its kink
    // wherever x = 0; move them off zero so the difference quotient is smooth.
    for (size_t i = 0; i < model.params().size(); ++i) {
      const std::string& n = model.params().names()[i];
      ag::Var v = model.params().vars()[i];
      if (n.find("norm2.gamma") != std::string::npos) v.mutable_value() = random_tensor(v.shape(), rng, 0.3, 1.0);
      if (n.find("norm2.beta") != std::string::npos) v.mutable_value() = random_tensor(v.shape(), rng, -0.1, 0.1);
    }
    const Tensor img = net::rgb_batch({&s.rgb});
    const net::TrainingTargets targets = net::assign_targets({&s.labels}, 2, 2);
    losses::LossConfig cfg;
    cfg.boundary = losses::BoundaryLoss::kDgbpl;
    ProbeOptions e2e = po;
    e2e.per_input = 2;
    if (opt.inject_fault) e2e.fault = 0.05;
    out.push_back(check_gradient(
        "end_to_end",
        [&] {
          const net::ForwardResult fr = model.forward(ag::constant(img));
          return losses::batch_loss(fr, targets, {&s.depth}, cfg).total;
        },
        model.params().vars(), kEndToEndTolerance, e2e));
  }
  return out;
}

}  // namespace xpd::gradcheck
