#include "rlf/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "rlf/errors.hpp"

namespace rlf {
namespace {

double evaluate(ParameterStore& params, const ScalarFn& fn) {
  ad::Graph g;
  g.set_grad_enabled(false);
  const ad::Var out = fn(g, params);
  return out.value().item();
}

}  // namespace

GradCheckResult grad_check(ParameterStore& params, const ScalarFn& fn, const GradCheckOptions& opts) {
  if (!(opts.h > 0.0)) throw ContractError("grad_check: step must be positive");

  params.zero_grad();
  {
    ad::Graph g;
    const ad::Var out = fn(g, params);
    if (out.value().size() != 1) {
      throw ContractError("grad_check: function is not scalar-valued, shape " + shape_str(out.shape()));
    }
    g.backward(out);
  }

  GradCheckResult result;
  std::mt19937_64 rng(opts.seed);
  for (auto& [name, p] : params.items()) {
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opts.max_elements_per_param && idx.size() > opts.max_elements_per_param) {
      // partial Fisher-Yates on raw engine output
      for (std::size_t i = 0; i < opts.max_elements_per_param; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(opts.max_elements_per_param);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double saved = p.value[i];
      p.value[i] = saved + opts.h;
      const double up = evaluate(params, fn);
      p.value[i] = saved - opts.h;
      const double down = evaluate(params, fn);
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.h);
      const double err = std::abs(p.grad[i] - numeric) / std::max(1.0, std::abs(numeric));
      ++result.elements_checked;
      if (result.worst_parameter.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_parameter = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace rlf
