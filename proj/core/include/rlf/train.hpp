#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "rlf/eval.hpp"
#include "rlf/model.hpp"

namespace rlf::train {

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  double rpn = 0.0;
  double rpn_cls = 0.0;
  double rpn_box = 0.0;
  double rpn_dir = 0.0;
  double shape_cls = 0.0;  // focal term of the shape loss
  double mccont = 0.0;
  double grad_norm = 0.0;
};

std::string step_log_json(const StepLog& s);

struct TrainOptions {
  std::ostream* log = nullptr;          // JSON lines
  std::filesystem::path checkpoint;     // manifest path; empty disables saving
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  std::vector<StepLog> history;
  std::size_t steps_completed = 0;
  bool numeric_failure = false;
  std::string failure;
};

// Learning rate at a 0-based step: linear warmup, then constant or cosine.
double learning_rate_at(const TrainConfig& cfg, std::size_t step);

// Momentum SGD on the final loss. Frames are visited in a seeded per-epoch
// order. On a non-finite loss or gradient the parameters are left at the
// last good state, that state is checkpointed and the result is flagged.
TrainResult train_model(const model::FusionModel& model, ParameterStore& store, const std::vector<synth::Frame>& frames,
                        const TrainOptions& opts = {});

struct FrameOutput {
  std::int64_t frame_id = 0;
  model::Prediction prediction;
};

std::vector<FrameOutput> run_inference(const model::FusionModel& model, ParameterStore& store,
                                       const std::vector<synth::Frame>& frames);

eval::MapReport evaluate_outputs(const std::vector<FrameOutput>& outputs, const std::vector<synth::Frame>& frames,
                                 const eval::EvalConfig& cfg);

// mAP over the entire area, 0 when undefined.
double overall_map(const eval::MapReport& report);

}  // namespace rlf::train
