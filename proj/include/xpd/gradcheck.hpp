#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xpd/autograd.hpp"

// Central finite-difference checks of the hand-written backward passes.
namespace xpd::gradcheck {

struct CheckResult {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  int64_t probes = 0;
  bool passed = false;

  nlohmann::json to_json() const;
};

struct ProbeOptions {
  int per_input = 6;    // coordinates probed per input tensor (all if fewer)
  double step = 1e-5;   // central-difference step
  uint64_t seed = 11;
  // Multiplies the analytic gradient by (1 + fault) before comparing; used
  // as a negative control.
  double fault = 0.0;
};

// Relative error per probe: |a - n| / max(|a|, |n|, 1e-3 * s, 1e-9) where s
// is the largest |numeric| gradient seen over all probes of the check.
CheckResult check_gradient(const std::string& name, const std::function<ag::Var()>& f,
                           const std::vector<ag::Var>& inputs, double tolerance, const ProbeOptions& opt = {});

inline constexpr double kLocalTolerance = 1e-4;
inline constexpr double kEndToEndTolerance = 1e-3;

struct SuiteOptions {
  uint64_t seed = 7;
  // Corrupts the analytic gradient of one check; the suite must then fail.
  bool inject_fault = false;
};

std::vector<CheckResult> run_all(const SuiteOptions& opt = {});
bool all_passed(const std::vector<CheckResult>& results);

}  // namespace xpd::gradcheck
