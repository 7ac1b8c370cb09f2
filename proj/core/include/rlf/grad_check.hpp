#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "rlf/graph.hpp"
#include "rlf/parameters.hpp"

namespace rlf {

struct GradCheckOptions {
  double h = 1e-6;
  // 0 checks every element; otherwise a seeded random subset per parameter.
  std::size_t max_elements_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t elements_checked = 0;
};

// Builds a scalar from the store's parameters on the supplied graph.
using ScalarFn = std::function<ad::Var(ad::Graph&, ParameterStore&)>;

// Compares reverse-mode gradients against central differences. The reported
// error per element is |analytic - numeric| / max(1, |numeric|).
GradCheckResult grad_check(ParameterStore& params, const ScalarFn& fn, const GradCheckOptions& opts = {});

}  // namespace rlf
