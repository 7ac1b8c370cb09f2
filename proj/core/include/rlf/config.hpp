#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "rlf/bev.hpp"
#include "rlf/eval.hpp"
#include "rlf/head.hpp"
#include "rlf/irb.hpp"
#include "rlf/pillarize.hpp"
#include "rlf/salc.hpp"

namespace rlf {

struct ModelConfig {
  std::size_t d = 32;
  std::size_t weight_hidden = 32;
  bool attention_softmax = true;
  std::size_t lidar_block_channels = 32;
  std::size_t lidar_out_channels = 64;
  std::size_t radar_block_channels = 32;
  std::size_t radar_out_channels = 32;
  std::size_t shape_hidden = 16;
  double tau = 0.1;
  double alpha = 1.0;
  bool mccont_normalize = true;
  head::AnchorConfig anchors;
  head::DecodeConfig decode;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 1;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t warmup_steps = 50;
  std::string schedule = "cosine";  // "cosine" | "constant"
  double final_lr_fraction = 0.05;
  double grad_clip = 10.0;          // global L2 norm, 0 disables
  std::uint64_t seed = 0;
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 0;  // 0: only at the end
};

struct Toggles {
  bool irb_rr = true;
  bool irb_rl = true;
  bool salc = true;
};

// Which radar indicative channels reach the weight MLP.
struct IndicativeMask {
  bool v_r = true;
  bool v_a = true;
  bool rcs = true;
};

struct Config {
  std::string name = "default";
  GridConfig grid;
  ModelConfig model;
  TrainConfig train;
  head::LossWeights loss;
  eval::EvalConfig eval;
  Toggles toggles;
  IndicativeMask indicative;

  // ConfigError naming the offending field.
  void validate() const;

  irb::IrbConfig irb_config() const;
  bev::BackboneConfig lidar_backbone() const;
  bev::BackboneConfig radar_backbone() const;
  salc::SalcConfig salc_config() const;
};

// Full JSON including every default.
std::string config_to_json(const Config& cfg);
// Keys absent from the text keep their defaults; unknown keys are a ConfigError.
Config config_from_json(const std::string& text);
Config load_config(const std::filesystem::path& path);

// MF_SEED, when set, replaces train.seed. ConfigError on a malformed value.
void apply_env_overrides(Config& cfg);

}  // namespace rlf
