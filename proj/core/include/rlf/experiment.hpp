#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rlf/config.hpp"
#include "rlf/eval.hpp"
#include "rlf/synth.hpp"

namespace rlf::experiment {

struct AblationRow {
  std::string name;
  Config config;
  eval::MapReport report;
  double map_all = 0.0;
  double map_corridor = 0.0;
  std::vector<std::size_t> mask_cells;  // per validation frame, G >= tau; empty when SALC is off
  double final_loss = 0.0;
  bool reused_training = false;         // configs differing only in diagnostics share one trained model
};

struct AblationOptions {
  std::filesystem::path out_dir;  // when set, <out_dir>/<name>/{train.jsonl, model.json, model.bin}
  std::function<void(const std::string&)> progress;
};

// Configuration identity for training purposes (name, tau and decode
// settings do not affect the trained parameters).
std::string training_key(const Config& cfg);

std::vector<AblationRow> run_ablation(const std::vector<Config>& configs, const std::vector<synth::Frame>& train_frames,
                                      const std::vector<synth::Frame>& val_frames, const AblationOptions& opts = {});

std::string ablation_table(const std::vector<AblationRow>& rows);
std::string ablation_json(const std::vector<AblationRow>& rows);

}  // namespace rlf::experiment
