#include "xpd/params.hpp"

#include <cmath>

namespace xpd {

ag::Var ParamSet::add(const std::string& name, Tensor init) { return adopt(name, ag::Var(std::move(init), true)); }

ag::Var ParamSet::adopt(const std::string& name, const ag::Var& var) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  if (!var.requires_grad()) throw ConfigError("parameter " + name + " does not require gradients");
  index_[name] = vars_.size();
  names_.push_back(name);
  vars_.push_back(var);
  return var;
}

const ag::Var& ParamSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return vars_[it->second];
}

int64_t ParamSet::total_numel() const {
  int64_t n = 0;
  for (const ag::Var& v : vars_) n += v.value().numel();
  return n;
}

void ParamSet::zero_grad() {
  for (ag::Var& v : vars_) v.zero_grad();
}

Tensor uniform_tensor(const Shape& shape, double bound, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor fan_in_uniform(int64_t cout, int64_t cin, int64_t k, Rng& rng) {
  return uniform_tensor({cout, cin, k, k}, 1.0 / std::sqrt(static_cast<double>(cin * k * k)), rng);
}

}  // namespace xpd
