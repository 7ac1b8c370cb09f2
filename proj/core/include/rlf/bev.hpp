#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rlf/graph.hpp"
#include "rlf/parameters.hpp"
#include "rlf/pillarize.hpp"

namespace rlf::bev {

// C x H x W feature image on the detection grid.
struct BevFeatureMap {
  ad::Var features;
  Modality modality = Modality::lidar;

  std::size_t channels() const { return features.shape()[0]; }
  std::size_t height() const { return features.shape()[1]; }
  std::size_t width() const { return features.shape()[2]; }
};

// Pseudo-image scatter of pillar embeddings [n, d] to [d, H, W]. Duplicate
// coordinates are a ContractError.
BevFeatureMap scatter_to_bev(ad::Var embeddings, const std::vector<PillarCoord>& coords, const GridConfig& grid,
                             Modality modality);
// Adjoint of scatter_to_bev: reads [n, d] back out at the coordinates.
ad::Var gather_from_bev(const BevFeatureMap& map, const std::vector<PillarCoord>& coords);

// Two stride-2 blocks (conv s2 + conv s1, ReLU) whose outputs are upsampled
// (nearest) to full resolution and concatenated with the input, followed by a
// 1x1 projection to out_channels.
struct BackboneConfig {
  std::size_t in_channels = 32;
  std::size_t block_channels = 32;
  std::size_t out_channels = 64;
};

void init_backbone(ParameterStore& store, const std::string& prefix, const BackboneConfig& cfg, Initializer& init);
BevFeatureMap backbone_forward(const BevFeatureMap& bev, ad::Graph& g, ParameterStore& store, const std::string& prefix);

}  // namespace rlf::bev
