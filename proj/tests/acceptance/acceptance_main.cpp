// Acceptance runner. Prints one PASS/FAIL line per criterion; detail lines
// start with "  ". Exit status is 0 only if every selected criterion passed.
//
//   xpd_acceptance [--criterion N ...] [--workdir DIR]
//
// Criteria 5 and 6 train 15 toy models (about 6 min each on one core). Runs
// are cached in the workdir and reused only when their config hash matches.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "../support/oracles.hpp"
#include "xpd/dataset.hpp"
#include "xpd/gradcheck.hpp"
#include "xpd/losses.hpp"
#include "xpd/metrics.hpp"
#include "xpd/net.hpp"
#include "xpd/raster.hpp"
#include "xpd/scene.hpp"
#include "xpd/train.hpp"

namespace fs = std::filesystem;
using namespace xpd;
using nlohmann::json;

namespace {

// --- pinned tolerances and budgets --------------------------------------------------

constexpr double kStdTol = 1e-10;
constexpr double kRampTol = 1e-12;  // 0.1 is not a binary fraction
constexpr double kRelTol = 1e-15;   // same for 1.1
constexpr double kRuntime1 = 10, kRuntime2 = 300, kRuntime3 = 60, kRuntime4 = 120, kRuntime7 = 60, kRuntime8 = 600;
constexpr double kRuntimePerModel = 1800;

// Mechanism test.
constexpr int kMechScenes = 200;
constexpr int kMechRadius = 4;
constexpr double kMechP = 0.01;
constexpr double kMechRatioMax = 0.6;  // frozen; the oracle run measured 0.062

// Toy recipe for the ordering criteria.
constexpr int kToySeeds = 3;
constexpr int kToyTrainScenes = 128, kToyEvalScenes = 48;
constexpr int kToyRows = 96, kToyCols = 128;
constexpr int kToyRadius = 6;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void note(const std::string& s) { std::printf("  %s\n", s.c_str()); }

// --- 1: raster oracles ------------------------------------------------------------------

Outcome raster_oracles() {
  double worst = 0;
  Rng rng(2024);
  for (int t = 0; t < 100; ++t) {
    const auto g = raster::sobel_gradient_mask(oracle::random_depth(16, 16, rng, t % 3 == 0 ? 0.05 : 0.0));
    const RealMap m = raster::windowed_std_map(g, 3);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) worst = std::max(worst, std::abs(m(r, c) - oracle::brute_std(g, r, c, 3)));
  }
  bool ok = worst < kStdTol;

  DepthMap ramp(10, 12), step(8, 20);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 12; ++c) ramp(r, c) = 1.0 + 0.1 * c;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 20; ++c) step(r, c) = c < 10 ? 1.0 : 2.0;
  const auto gr = raster::sobel_gradient_mask(ramp), gs = raster::sobel_gradient_mask(step);
  for (int r = 1; r < 9; ++r)
    for (int c = 1; c < 11; ++c) ok &= std::abs(gr.values(r, c) - 0.8) < kRampTol;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 20; ++c) ok &= gs.values(r, c) == ((c == 9 || c == 10) ? 4.0 : 0.0);

  RealMap dot(5, 5);
  dot(2, 2) = 1.0;
  const RealMap b = raster::laplacian_boundary(dot);
  ok &= raster::laplacian_response(dot)(2, 2) == -4.0;
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) ok &= b(r, c) == (std::abs(r - 2) + std::abs(c - 2) <= 1 ? 1.0 : 0.0);
  return {ok, "max |std - brute| " + fmt("%.2e", worst)};
}

// --- 2: gradient suite ------------------------------------------------------------------

Outcome gradient_suite() {
  const auto res = gradcheck::run_all();
  double worst = 0;
  for (const auto& r : res) {
    note(r.name + ": rel err " + fmt("%.2e", r.max_rel_error) + " tol " + fmt("%.0e", r.tolerance) +
         (r.passed ? "" : "  FAILED"));
    worst = std::max(worst, r.max_rel_error / r.tolerance);
  }
  return {gradcheck::all_passed(res) && res.size() >= 8,
          std::to_string(res.size()) + " checks, worst err/tol " + fmt("%.3f", worst)};
}

// --- 3: metric oracles --------------------------------------------------------------------

Outcome metric_oracles() {
  bool ok = true;
  Rng rng(77);
  const auto ds = oracle::random_instances(rng, 200);
  const auto th = metrics::coco_thresholds();
  const auto got = metrics::average_precision(ds, th, false);
  int mismatches = 0;
  for (size_t k = 0; k < th.size(); ++k)
    if (!got[k] || *got[k] != oracle::average_precision(ds, th[k])) ++mismatches;
  ok &= mismatches == 0;

  DepthMap g(4, 5);
  for (size_t i = 0; i < g.size(); ++i) g[i] = 0.5 + 0.25 * i;
  const auto id = *metrics::depth_metrics(g, g);
  ok &= id.rel == 0 && id.log10 == 0 && id.rms == 0 && id.delta1 == 1 && id.delta2 == 1 && id.delta3 == 1;
  DepthMap p = g;
  for (double& v : p.storage()) v *= 1.1;
  const double rel = metrics::depth_metrics(p, g)->rel;
  ok &= std::abs(rel - 0.1) <= kRelTol;

  using oracle::gt, oracle::pred, oracle::rect;
  metrics::ImageInstances same, third, disjoint;
  same.gt = {gt(rect(8, 8, 1, 5, 1, 6))};
  same.pred = {pred(rect(8, 8, 1, 5, 1, 6), 0.7)};
  third.gt = {gt(rect(4, 8, 0, 4, 0, 2))};
  third.pred = {pred(rect(4, 8, 0, 4, 0, 3), 0.7)};
  disjoint.gt = {gt(rect(4, 12, 0, 4, 0, 4))};
  disjoint.pred = {pred(rect(4, 12, 0, 4, 0, 6), 0.7)};
  ok &= *metrics::boundary_iou({same}) == 1.0;
  ok &= *metrics::boundary_iou({third}) == 1.0 / 3.0;
  ok &= *metrics::boundary_iou({disjoint}, 0.3) == 0.0;
  return {ok, std::to_string(mismatches) + " AP mismatches over " + std::to_string(th.size()) +
                  " thresholds; rel(x1.1) - 0.1 = " + fmt("%.1e", rel - 0.1)};
}

// --- 4: weight separation -----------------------------------------------------------

// One-sided Mann-Whitney U (H1: a tends to be smaller than b), normal
// approximation with tie correction and continuity correction.
double mann_whitney_less(const std::vector<double>& a, const std::vector<double>& b) {
  struct Item {
    double v;
    bool from_a;
  };
  std::vector<Item> all;
  all.reserve(a.size() + b.size());
  for (double v : a) all.push_back({v, true});
  for (double v : b) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Item& x, const Item& y) { return x.v < y.v; });
  const double n = static_cast<double>(all.size()), na = a.size(), nb = b.size();
  double rank_a = 0, ties = 0;
  for (size_t i = 0; i < all.size();) {
    size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) ++j;
    const double avg = 0.5 * (i + 1 + j);  // ranks i+1 .. j
    for (size_t k = i; k < j; ++k)
      if (all[k].from_a) rank_a += avg;
    const double t = static_cast<double>(j - i);
    ties += t * t * t - t;
    i = j;
  }
  const double u = rank_a - na * (na + 1) / 2;
  const double var = na * nb / 12.0 * ((n + 1) - ties / (n * (n - 1)));
  const double z = (u - na * nb / 2 + 0.5) / std::sqrt(var);
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

Outcome weight_separation() {
  scene::SceneConfig sc;  // 192 x 256 room scenes
  std::vector<double> displaced, on_edge;
  for (int s = 0; s < kMechScenes; ++s) {
    const auto scn = scene::generate_scene(Rng::mix(4242, s), sc);
    const LabelMap noisy = scene::corrupt_boundaries(scn.labels, kMechRadius, Rng::mix(99, s));
    // True discontinuities and plane junctions both sit on clean label transitions.
    const Grid2<int> dist = raster::chessboard_distance(raster::label_transitions(scn.labels));
    std::set<int32_t> ids(noisy.values().begin(), noisy.values().end());
    for (int32_t id : ids) {
      if (id == 0) continue;
      RealMap mask(noisy.rows(), noisy.cols());
      for (size_t i = 0; i < mask.size(); ++i) mask[i] = noisy[i] == id;
      const RealMap boundary = raster::laplacian_boundary(mask);
      const auto w = losses::dgbpl_weights(mask, scn.depth, raster::WeightMode::kFullField);
      if (w.degenerate) continue;
      for (size_t i = 0; i < mask.size(); ++i)
        if (boundary[i] > 0) (dist[i] <= 1 ? on_edge : displaced).push_back(w.weights[i]);
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / v.size();
  };
  const double ratio = mean(displaced) / mean(on_edge);
  const double p = mann_whitney_less(displaced, on_edge);
  note("boundary pixels: " + std::to_string(on_edge.size()) + " on true edges, " + std::to_string(displaced.size()) +
       " displaced");
  note("mean weight on edges " + fmt("%.4f", mean(on_edge)) + ", displaced " + fmt("%.4f", mean(displaced)));
  const bool ok = !displaced.empty() && !on_edge.empty() && p < kMechP && ratio <= kMechRatioMax;
  return {ok, "ratio " + fmt("%.4f", ratio) + " (max " + fmt("%.2f", kMechRatioMax) + "), p " + fmt("%.2e", p)};
}

// --- 5 and 6: toy training sweep ------------------------------------------------------

struct ToyRun {
  uint64_t seed;
  distill::Variant variant;
  losses::BoundaryLoss boundary;
};

config::RunConfig toy_config(const fs::path& work, const ToyRun& r) {
  config::RunConfig c;
  c.seed = r.seed;
  c.dataset.path = (work / "train").string();
  c.dataset.num_scenes = kToyTrainScenes;
  c.dataset.scene.height = kToyRows;
  c.dataset.scene.width = kToyCols;
  c.dataset.corruption_radius = kToyRadius;
  c.net.c2 = 16, c.net.c3 = 32, c.net.c4 = 64;
  c.net.mask_channels = 16, c.net.depth_channels = 32, c.net.head_channels = 32, c.net.groups = 8;
  c.net.variant = r.variant;
  c.loss.boundary = r.boundary;
  c.train.epochs = 12;
  c.train.batch_size = 4;
  c.train.lr = 0.002;
  c.eval.path = (work / "eval").string();
  c.eval.max_scenes = kToyEvalScenes;
  c.output_dir = (work / (std::string("s") + std::to_string(r.seed) + "_" + distill::variant_name(r.variant) + "_" +
                          losses::boundary_loss_name(r.boundary)))
                     .string();
  return c;
}

// Generates a dataset unless an identical one is already there.
void ensure_dataset(const fs::path& dir, const config::DatasetConfig& d, uint64_t seed) {
  if (fs::exists(dir / "manifest.json")) {
    const json m = json::parse(std::ifstream(dir / "manifest.json"));
    if (m.value("seed", uint64_t{0}) == seed && m["config"]["num_scenes"] == d.num_scenes &&
        m["config"]["corruption_radius"] == d.corruption_radius &&
        m["config"]["scene"] == config::scene_config_to_json(d.scene))
      return;
  }
  dataset::generate(dir, d, seed);
}

class ToySweep {
 public:
  explicit ToySweep(fs::path work) : work_(std::move(work)) {}

  json metrics(const ToyRun& r) {
    const config::RunConfig cfg = toy_config(work_, r);
    const std::string key = cfg.output_dir;
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    if (!datasets_ready_) {
      ensure_dataset(cfg.dataset.path, cfg.dataset, 1);
      config::DatasetConfig e = cfg.dataset;
      e.num_scenes = kToyEvalScenes;
      ensure_dataset(cfg.eval.path, e, Rng::mix(1, 0xe7a1u));
      datasets_ready_ = true;
    }
    const fs::path report = fs::path(cfg.output_dir) / "report.json";
    json rep;
    if (fs::exists(report)) rep = json::parse(std::ifstream(report));
    if (!rep.is_object() || rep.value("config_hash", "") != config::run_hash(cfg) ||
        !rep.contains("metrics")) {
      const auto t0 = std::chrono::steady_clock::now();
      train::run(cfg, cfg.output_dir);
      const double dt = seconds_since(t0);
      slowest_ = std::max(slowest_, dt);
      rep = json::parse(std::ifstream(report));
      note("trained " + key + " in " + fmt("%.0f s", dt));
    }
    return cache_[key] = rep["metrics"];
  }

  double slowest() const { return slowest_; }

 private:
  fs::path work_;
  bool datasets_ready_ = false;
  double slowest_ = 0;
  std::map<std::string, json> cache_;
};

Outcome boundary_ordering(ToySweep& sweep) {
  using losses::BoundaryLoss;
  double dg = 0, va = 0, off = 0;
  int gap_positive = 0;
  for (int s = 1; s <= kToySeeds; ++s) {
    const double a = sweep.metrics({uint64_t(s), distill::Variant::kXpd, BoundaryLoss::kDgbpl})["boundary_iou"];
    const double b = sweep.metrics({uint64_t(s), distill::Variant::kXpd, BoundaryLoss::kVanilla})["boundary_iou"];
    const double c = sweep.metrics({uint64_t(s), distill::Variant::kXpd, BoundaryLoss::kOff})["boundary_iou"];
    note("seed " + std::to_string(s) + " boundary IoU dgbpl " + fmt("%.4f", a) + " vanilla " + fmt("%.4f", b) +
         " off " + fmt("%.4f", c));
    dg += a / kToySeeds, va += b / kToySeeds, off += c / kToySeeds;
    gap_positive += a > b;
  }
  const bool ok = dg > va && va >= off && gap_positive >= 2 && sweep.slowest() <= kRuntimePerModel;
  return {ok, "mean dgbpl " + fmt("%.4f", dg) + " vanilla " + fmt("%.4f", va) + " off " + fmt("%.4f", off) +
                  ", dgbpl>vanilla in " + std::to_string(gap_positive) + "/3 seeds"};
}

Outcome variant_ordering(ToySweep& sweep) {
  using losses::BoundaryLoss;
  double x = 0, p = 0, n = 0;
  for (int s = 1; s <= kToySeeds; ++s) {
    const double a = sweep.metrics({uint64_t(s), distill::Variant::kXpd, BoundaryLoss::kOff})["ap_m"];
    const double b = sweep.metrics({uint64_t(s), distill::Variant::kPadNet, BoundaryLoss::kOff})["ap_m"];
    const double c = sweep.metrics({uint64_t(s), distill::Variant::kNone, BoundaryLoss::kOff})["ap_m"];
    note("seed " + std::to_string(s) + " AP_m xpd " + fmt("%.4f", a) + " pad_net " + fmt("%.4f", b) + " none " +
         fmt("%.4f", c));
    x += a / kToySeeds, p += b / kToySeeds, n += c / kToySeeds;
  }
  note("xpd - pad_net gap " + fmt("%+.4f", x - p) + " (reported, not gated)");
  const bool ok = x > n && p > n && sweep.slowest() <= kRuntimePerModel;
  return {ok, "mean AP_m xpd " + fmt("%.4f", x) + " pad_net " + fmt("%.4f", p) + " none " + fmt("%.4f", n)};
}

// --- 7: baseline equivalence ------------------------------------------------------------

Outcome baseline_equivalence() {
  net::NetConfig cfg;
  cfg.c2 = 16, cfg.c3 = 32, cfg.c4 = 64;
  cfg.mask_channels = 16, cfg.depth_channels = 32, cfg.head_channels = 32;
  cfg.variant = distill::Variant::kNone;
  net::XpdNet none(cfg, 31);
  cfg.variant = distill::Variant::kXpd;
  net::XpdNet xpd(cfg, 32);
  for (const auto& name : none.params().names())
    ag::Var(xpd.params().at(name)).mutable_value() = none.params().at(name).value();
  xpd.seg_to_depth().zero();
  xpd.depth_to_seg().zero();

  scene::SceneConfig sc;
  sc.height = 96, sc.width = 128;
  int differing = 0;
  for (int s = 0; s < 20; ++s) {
    const auto scn = scene::generate_scene(Rng::mix(700, s), sc);
    const ag::Var rgb(net::rgb_batch({&scn.rgb}));
    ag::NoGradGuard ng;
    const auto a = none.forward(rgb), b = xpd.forward(rgb);
    differing += !(a.seg.score_logits.value() == b.seg.score_logits.value() &&
                   a.seg.kernels.value() == b.seg.kernels.value() &&
                   a.seg.mask_feature.value() == b.seg.mask_feature.value() &&
                   a.depth.depth.value() == b.depth.depth.value());
  }
  return {differing == 0, std::to_string(differing) + "/20 scenes differ"};
}

// --- 8: determinism ------------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(XPD_BINARY) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
    ++files;
  }
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file() && !fs::exists(a / fs::relative(e.path(), b))) return false;
  return files > 0;
}

Outcome determinism(const fs::path& work) {
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string common =
      " --set seed=3 dataset.num_scenes=12 dataset.scene.height=64 dataset.scene.width=96"
      " dataset.corruption_radius=4 net.c2=8 net.c3=16 net.c4=32 net.mask_channels=8 net.depth_channels=8"
      " net.head_channels=8 net.groups=4 train.epochs=2 train.batch_size=4 eval.max_scenes=6";
  const std::string data = " dataset.path=" + (root / "train").string() + " eval.path=" + (root / "eval").string();
  bool ok = run_cli("generate" + common + data) == 0 && run_cli("generate --split eval" + common + data) == 0;
  const std::string again = " dataset.path=" + (root / "train2").string() + " eval.path=" + (root / "eval").string();
  ok &= run_cli("generate" + common + again) == 0;
  const bool gen_same = ok && same_tree(root / "train", root / "train2");
  ok &= run_cli("train" + common + data + " --out " + (root / "a").string()) == 0;
  ok &= run_cli("train" + common + data + " --out " + (root / "b").string()) == 0;
  const bool report_same = ok && fs::exists(root / "a" / "report.json") &&
                           slurp(root / "a" / "report.json") == slurp(root / "b" / "report.json") &&
                           json::parse(slurp(root / "a" / "report.json")).contains("metrics");
  return {ok && gen_same && report_same, std::string("generate ") + (gen_same ? "byte-identical" : "DIFFERS") +
                                             ", report.json " + (report_same ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("xpd acceptance criteria");
  std::vector<int> only;
  std::string workdir = "acceptance_work";
  app.add_option("--criterion", only, "run only these criteria (1-8)")->check(CLI::Range(1, 8));
  app.add_option("--workdir", workdir, "scratch and cache directory");
  CLI11_PARSE(app, argc, argv);
  if (only.empty()) only = {1, 2, 3, 4, 5, 6, 7, 8};
  fs::create_directories(workdir);

  ToySweep sweep(workdir);
  const std::map<int, std::pair<double, std::function<Outcome()>>> criteria = {
      {1, {kRuntime1, raster_oracles}},
      {2, {kRuntime2, gradient_suite}},
      {3, {kRuntime3, metric_oracles}},
      {4, {kRuntime4, weight_separation}},
      {5, {kRuntimePerModel * 3 * kToySeeds, [&] { return boundary_ordering(sweep); }}},
      {6, {kRuntimePerModel * 3 * kToySeeds, [&] { return variant_ordering(sweep); }}},
      {7, {kRuntime7, baseline_equivalence}},
      {8, {kRuntime8, [&] { return determinism(workdir); }}},
  };
  int failed = 0;
  for (int id : only) {
    const auto& [budget, fn] = criteria.at(id);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double dt = seconds_since(t0);
    if (dt > budget) {
      o.pass = false;
      o.detail += "; over runtime budget";
    }
    std::printf("criterion %d %s  %s  [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), dt);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
