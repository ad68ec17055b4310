#include "xpd/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "xpd/checkpoint.hpp"
#include "xpd/evaluate.hpp"

namespace xpd::train {

namespace fs = std::filesystem;
using nlohmann::json;

Adam::Adam(const ParamSet& params, double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const ag::Var& v : params.vars()) {
    m_.emplace_back(v.shape());
    v_.emplace_back(v.shape());
  }
}

void Adam::step(ParamSet& params, double lr) {
  if (params.size() != m_.size()) throw PreconditionError("Adam: parameter set changed size");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    ag::Var p = params.vars()[i];
    const Tensor g = p.grad();
    Tensor& w = p.mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (int64_t k = 0; k < w.numel(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

NonFiniteLoss::NonFiniteLoss(int64_t s, const losses::LossBreakdown& last)
    : Error("non-finite loss at step " + std::to_string(s) + "; last finite breakdown " + last.to_json().dump()),
      step(s),
      last_finite(last) {}

losses::CompositeResult batch_objective(const net::XpdNet& model, const std::vector<dataset::TrainingItem>& items,
                                        const losses::LossConfig& cfg, int* num_positive) {
  std::vector<const scene::RgbImage*> rgb;
  std::vector<const LabelMap*> labels;
  std::vector<const DepthMap*> depth;
  for (const auto& it : items) {
    rgb.push_back(&it.rgb);
    labels.push_back(&it.labels);
    depth.push_back(&it.depth);
  }
  const int H = items.at(0).rgb.rows(), W = items.at(0).rgb.cols();
  const net::TrainingTargets targets = net::assign_targets(labels, H / net::kGridStride, W / net::kGridStride);
  if (num_positive) *num_positive = targets.num_positive();
  const net::ForwardResult fr = model.forward(ag::constant(net::rgb_batch(rgb)));
  return losses::batch_loss(fr, targets, depth, cfg);
}

namespace {

json epoch_mean(const std::vector<losses::LossBreakdown>& v) {
  losses::LossBreakdown m;
  for (const auto& b : v) {
    m.focal += b.focal;
    m.dice += b.dice;
    m.rmse += b.rmse;
    m.boundary += b.boundary;
    m.constraints += b.constraints;
    m.total += b.total;
  }
  const double n = std::max<size_t>(1, v.size());
  m.focal /= n;
  m.dice /= n;
  m.rmse /= n;
  m.boundary /= n;
  m.constraints /= n;
  m.total /= n;
  return m.to_json();
}

bool grads_finite(const ParamSet& ps) {
  for (const ag::Var& v : ps.vars())
    if (!v.grad().all_finite()) return false;
  return true;
}

}  // namespace

TrainResult run(const config::RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const dataset::Dataset data = dataset::load(cfg.dataset.path, cfg.train.max_scenes);
  if (data.samples.empty()) throw ConfigError("training dataset is empty");
  const bool corrupted = cfg.train.labels == "corrupted";
  if (corrupted && !data.manifest.value("has_corrupted", false))
    throw ConfigError("train.labels=corrupted but the dataset has no corrupted labels");
  const int H = data.samples[0].scene.rows(), W = data.samples[0].scene.cols();
  if (H % net::kGridStride || W % net::kGridStride) throw ConfigError("training images must be divisible by 16");

  fs::create_directories(out_dir);
  std::ofstream(out_dir / dataset::kIncompleteMarker) << "train\n";
  const json cfg_json = cfg.to_json();
  const std::string cfg_hash = config::run_hash(cfg);
  std::ofstream(out_dir / "config.json") << cfg_json.dump(2) << "\n";
  std::ofstream log(out_dir / "log.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot write " + (out_dir / "log.jsonl").string());

  TrainResult res;
  res.model = std::make_unique<net::XpdNet>(cfg.net, Rng::mix(cfg.seed, 0x6d6f64u));
  net::XpdNet& model = *res.model;
  Adam adam(model.params(), cfg.train.adam_beta1, cfg.train.adam_beta2, cfg.train.adam_eps);

  const int n = static_cast<int>(data.samples.size());
  const int bs = cfg.train.batch_size;
  json epochs = json::array();
  losses::LossBreakdown last_finite;
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const double lr = cfg.train.lr * (epoch >= cfg.train.resolved_decay_epoch() ? cfg.train.decay_factor : 1.0);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(Rng::mix(cfg.seed, 0x5000u + static_cast<uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.uniform_int(0, i)]);
    std::vector<losses::LossBreakdown> seen;
    for (int start = 0; start < n; start += bs) {
      std::vector<dataset::TrainingItem> items;
      for (int k = start; k < std::min(n, start + bs); ++k)
        items.push_back(dataset::training_item(data.samples[order[k]], corrupted, cfg.train.augment, cfg.seed, epoch,
                                               order[k]));
      model.params().zero_grad();
      int num_pos = 0;
      const losses::CompositeResult obj = batch_objective(model, items, cfg.loss, &num_pos);
      const auto& b = obj.breakdown;
      if (!std::isfinite(b.total) || !std::isfinite(b.focal) || !std::isfinite(b.dice) || !std::isfinite(b.rmse) ||
          !std::isfinite(b.boundary) || !std::isfinite(b.constraints))
        throw NonFiniteLoss(step, last_finite);
      ag::backward(obj.total);
      if (!grads_finite(model.params())) throw NonFiniteLoss(step, last_finite);
      adam.step(model.params(), lr);
      last_finite = b;
      seen.push_back(b);
      json line = b.to_json();
      line["step"] = step;
      line["epoch"] = epoch;
      line["lr"] = lr;
      line["num_positive"] = num_pos;
      log << line.dump() << "\n";
      ++step;
    }
    log.flush();
    json em = epoch_mean(seen);
    em["epoch"] = epoch;
    epochs.push_back(em);
    checkpoint::save(out_dir / ("ckpt-epoch" + std::to_string(epoch + 1)), model,
                     json{{"epoch", epoch + 1}, {"step", step}, {"config_hash", cfg_hash}});
  }
  res.steps = step;
  res.report = {{"config_hash", cfg_hash},
                {"architecture_hash", model.architecture_hash()},
                {"variant", distill::variant_name(cfg.net.variant)},
                {"boundary_loss", losses::boundary_loss_name(cfg.loss.boundary)},
                {"train_labels", cfg.train.labels},
                {"steps", step},
                {"epochs", epochs},
                {"final_checkpoint", "ckpt-epoch" + std::to_string(cfg.train.epochs)}};
  if (cfg.train.eval_after && !cfg.eval.path.empty() && fs::exists(fs::path(cfg.eval.path) / "manifest.json")) {
    const dataset::Dataset eval_data = dataset::load(cfg.eval.path, cfg.eval.max_scenes);
    res.report["metrics"] = evaluate::evaluate_model(model, eval_data, evaluate::EvalOptions::from_config(cfg.eval)).to_json();
  }
  std::ofstream(out_dir / "report.json") << res.report.dump(2) << "\n";
  fs::remove(out_dir / dataset::kIncompleteMarker);
  return res;
}

}  // namespace xpd::train
