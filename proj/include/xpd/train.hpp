#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "xpd/config.hpp"
#include "xpd/dataset.hpp"
#include "xpd/losses.hpp"
#include "xpd/net.hpp"

namespace xpd::train {

// Adam with bias correction; moments live alongside the ParamSet order.
class Adam {
 public:
  Adam(const ParamSet& params, double beta1, double beta2, double eps);
  void step(ParamSet& params, double lr);
  int64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct NonFiniteLoss : Error {
  NonFiniteLoss(int64_t step, const losses::LossBreakdown& last_finite);
  int64_t step;
  losses::LossBreakdown last_finite;
};

struct TrainResult {
  std::unique_ptr<net::XpdNet> model;
  int64_t steps = 0;
  nlohmann::json report;
};

// Builds the per-batch inputs, targets and depth GT and returns the objective.
losses::CompositeResult batch_objective(const net::XpdNet& model, const std::vector<dataset::TrainingItem>& items,
                                        const losses::LossConfig& cfg, int* num_positive = nullptr);

// Trains on cfg.dataset.path and writes config.json, log.jsonl, ckpt-epochN
// and report.json into out_dir. When cfg.train.eval_after is set and
// cfg.eval.path holds a dataset, report.json includes its metrics.
TrainResult run(const config::RunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace xpd::train
