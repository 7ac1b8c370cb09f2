#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rlf/config.hpp"
#include "rlf/grad_check.hpp"
#include "rlf/synth.hpp"

namespace rlf::gradients {

struct CaseResult {
  std::string name;
  GradCheckResult check;
  bool passed = false;
};

// Small model and scene used for the end-to-end check: a 32 x 32 grid, narrow
// layers and a two-object frame.
Config small_config();
synth::Frame two_object_frame(std::uint64_t seed);

// Adds uniform(-a, a) noise to every parameter so that no activation sits
// exactly on a ReLU kink (zero biases over zero inputs would).
void jitter_params(ParameterStore& store, std::uint64_t seed, double amplitude);

// Finite-difference checks of every differentiable op, each module and the
// end-to-end final loss.
std::vector<CaseResult> run_op_suite(std::uint64_t seed, double tolerance = 1e-4);
std::vector<CaseResult> run_module_suite(std::uint64_t seed, double tolerance = 1e-4);
CaseResult run_end_to_end(const Config& cfg, const synth::Frame& frame, std::uint64_t seed, double tolerance = 1e-4,
                          std::size_t elements_per_param = 4);

std::vector<CaseResult> run_full_suite(std::uint64_t seed, double tolerance = 1e-4);

}  // namespace rlf::gradients
