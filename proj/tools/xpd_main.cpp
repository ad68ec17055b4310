// xpd: generate | train | eval | gradcheck | visualize
//
// Exit status: 0 ok, 1 runtime failure, 2 invalid input/config, 3 check failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "xpd/checkpoint.hpp"
#include "xpd/config.hpp"
#include "xpd/dataset.hpp"
#include "xpd/evaluate.hpp"
#include "xpd/gradcheck.hpp"
#include "xpd/train.hpp"
#include "xpd/visualize.hpp"

namespace fs = std::filesystem;
using namespace xpd;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitCheck = 3;

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out;

  config::RunConfig resolve() const {
    std::vector<std::string> o = overrides;
    if (!out.empty()) o.push_back("output_dir=" + out);
    return config::resolve(config_file.empty() ? std::nullopt : std::optional<std::string>(config_file), o);
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "dotted override, e.g. train.epochs=3")->take_all();
  cmd->add_option("--out", c.out, "output directory (overrides output_dir)");
}

int cmd_generate(const Common& c, const std::string& split) {
  config::RunConfig cfg = c.resolve();
  config::DatasetConfig d = cfg.dataset;
  uint64_t seed = cfg.seed;
  if (split == "eval") {
    // Held-out scenes: different seed stream, written to eval.path.
    d.path = cfg.eval.path;
    seed = Rng::mix(cfg.seed, 0xe7a1u);
  }
  dataset::generate(d.path, d, seed);
  std::printf("wrote %d scenes to %s\n", d.num_scenes, d.path.c_str());
  return 0;
}

int cmd_train(const Common& c) {
  const config::RunConfig cfg = c.resolve();
  const train::TrainResult r = train::run(cfg, cfg.output_dir);
  std::printf("trained %lld steps; report at %s\n", static_cast<long long>(r.steps),
              (fs::path(cfg.output_dir) / "report.json").c_str());
  return 0;
}

int cmd_eval(const Common& c) {
  const config::RunConfig cfg = c.resolve();
  const metrics::MetricsReport r = evaluate::run(cfg, cfg.output_dir);
  std::cout << r.table();
  return 0;
}

int cmd_gradcheck(const Common& c, bool inject_fault) {
  const config::RunConfig cfg = c.resolve();
  gradcheck::SuiteOptions opt;
  opt.seed = cfg.seed;
  opt.inject_fault = inject_fault;
  const auto results = gradcheck::run_all(opt);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : results) {
    std::printf("%-28s max_rel_err %.3e  tol %.0e  probes %4lld  %s\n", r.name.c_str(), r.max_rel_error, r.tolerance,
                static_cast<long long>(r.probes), r.passed ? "PASS" : "FAIL");
    j.push_back(r.to_json());
  }
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    std::ofstream(fs::path(c.out) / "gradcheck.json") << j.dump(2) << "\n";
  }
  const bool ok = gradcheck::all_passed(results);
  std::printf("%zu checks, %s\n", results.size(), ok ? "all passed" : "FAILURES");
  return ok ? 0 : kExitCheck;
}

int cmd_visualize(const Common& c) {
  const config::RunConfig cfg = c.resolve();
  viz::run(cfg, cfg.output_dir);
  std::printf("wrote images to %s\n", cfg.output_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy planar-scene multi-task network"};
  app.require_subcommand(1);
  Common common;
  std::string split = "train";
  bool inject_fault = false;

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(gen, common);
  gen->add_option("--split", split, "train (dataset.path) or eval (eval.path)")->check(CLI::IsMember({"train", "eval"}));
  CLI::App* tr = app.add_subcommand("train", "train a model");
  add_common(tr, common);
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, common);
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(gc, common);
  gc->add_flag("--inject-fault", inject_fault, "corrupt one analytic gradient (negative control)");
  CLI::App* vz = app.add_subcommand("visualize", "draw scene and prediction panels");
  add_common(vz, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInvalid;
  }

  try {
    if (gen->parsed()) return cmd_generate(common, split);
    if (tr->parsed()) return cmd_train(common);
    if (ev->parsed()) return cmd_eval(common);
    if (gc->parsed()) return cmd_gradcheck(common, inject_fault);
    if (vz->parsed()) return cmd_visualize(common);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const PreconditionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitRuntime;
}
