#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rlf/config.hpp"
#include "rlf/graph.hpp"
#include "rlf/head.hpp"
#include "rlf/parameters.hpp"
#include "rlf/pillarize.hpp"
#include "rlf/salc.hpp"
#include "rlf/synth.hpp"

namespace rlf::model {

// Pillarized, normalized network inputs of one frame.
struct FrameInputs {
  std::int64_t frame_id = 0;
  PillarSet radar;
  PillarSet lidar;
  Tensor radar_spatial;     // [N, P, 9], scaled
  Tensor radar_indicative;  // [N, P, 3], scaled, masked channels zeroed
  Tensor lidar_spatial;     // [M, P, 10], scaled
  std::vector<Box3D> labels;
};

struct FrameTargets {
  head::AnchorTargets anchors;
  salc::ShapeTargets shape;
};

// Per-channel input scales (applied multiplicatively).
extern const std::array<double, kRadarSpatialChannels> kRadarSpatialScale;
extern const std::array<double, kIndicativeChannels> kIndicativeScale;
extern const std::array<double, kLidarChannels> kLidarScale;

struct Forward {
  head::HeadOutput head;
  std::optional<salc::ShapeHeatmaps> shape;
  ad::Var radar_pillars;  // p_r pooled [N, d]
  ad::Var lidar_pillars;  // p_l [M, d]
};

struct Losses {
  ad::Var total;
  head::RpnLoss rpn;
  std::optional<salc::ShapeLoss> shape;
};

struct Prediction {
  std::vector<Detection> detections;
  std::optional<Tensor> heat;  // G, when SALC is enabled
};

class FusionModel {
 public:
  explicit FusionModel(Config cfg);

  const Config& config() const { return cfg_; }
  const head::AnchorGrid& anchors() const { return anchors_; }

  // Creates every parameter regardless of toggles, so checkpoints of ablated
  // models share one layout; disabled parts simply receive no gradient.
  void init_params(ParameterStore& store, std::uint64_t seed) const;

  FrameInputs prepare_inputs(const synth::Frame& frame) const;
  FrameTargets prepare_targets(const FrameInputs& inputs, std::vector<std::string>* warnings = nullptr) const;

  Forward forward(ad::Graph& g, ParameterStore& store, const FrameInputs& in) const;
  Losses loss(const Forward& fwd, const FrameTargets& targets, std::int64_t frame_id) const;

  Prediction predict(ParameterStore& store, const FrameInputs& in) const;

 private:
  Config cfg_;
  head::AnchorGrid anchors_;
};

}  // namespace rlf::model
