#include "rlf/parameters.hpp"

#include <cmath>

#include "rlf/errors.hpp"

namespace rlf {

Parameter& ParameterStore::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw ContractError("duplicate parameter name: " + name);
  Tensor grad(init.shape(), 0.0);
  auto [it, ok] = params_.emplace(name, Parameter{name, std::move(init), std::move(grad)});
  return it->second;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

double Initializer::uniform(double lo, double hi) {
  // 53 random mantissa bits -> [0, 1)
  const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

Tensor Initializer::he_uniform(Shape shape, std::size_t fan_in) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (double& v : t.data()) v = uniform(-bound, bound);
  return t;
}

}  // namespace rlf
