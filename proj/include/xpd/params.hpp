#pragma once

#include <map>
#include <string>
#include <vector>

#include "xpd/autograd.hpp"
#include "xpd/rng.hpp"

namespace xpd {

// Ordered registry of named trainable tensors. Registration order is the
// serialization and optimizer order.
class ParamSet {
 public:
  // Registers a fresh leaf requiring gradients.
  ag::Var add(const std::string& name, Tensor init);
  // Registers an existing leaf (shares its node).
  ag::Var adopt(const std::string& name, const ag::Var& var);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const ag::Var& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<ag::Var>& vars() const { return vars_; }
  size_t size() const { return vars_.size(); }
  int64_t total_numel() const;

  void zero_grad();

 private:
  std::vector<std::string> names_;
  std::vector<ag::Var> vars_;
  std::map<std::string, size_t> index_;
};

// U(-bound, bound) samples.
Tensor uniform_tensor(const Shape& shape, double bound, Rng& rng);
// Conv weight (cout, cin, k, k) with the default fan-in bound 1 / sqrt(cin * k * k).
Tensor fan_in_uniform(int64_t cout, int64_t cin, int64_t k, Rng& rng);

}  // namespace xpd
