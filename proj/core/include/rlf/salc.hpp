#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rlf/bev.hpp"
#include "rlf/box.hpp"
#include "rlf/graph.hpp"
#include "rlf/parameters.hpp"
#include "rlf/pillarize.hpp"

// LiDAR-driven shape awareness: class shape heatmaps from LiDAR BEV features,
// supervised by a penalty-reduced focal loss plus a multi-class instance
// contrastive loss, then concatenated into the radar BEV branch.
namespace rlf::salc {

struct SalcConfig {
  std::size_t in_channels = 64;     // LiDAR BEV channels
  std::size_t hidden = 16;
  std::size_t num_classes = kNumClasses;
  std::size_t radar_channels = 32;  // radar BEV channels
  double tau = 0.1;
  // Unit-length instance embeddings; the unnormalized product is unbounded below.
  bool normalize_embeddings = true;
  double focal_gamma = 2.0;
  double focal_beta = 4.0;
};

void init_params(ParameterStore& store, const SalcConfig& cfg, Initializer& init);

struct ShapeHeatmaps {
  ad::Var logits;  // F, pre-sigmoid [N_cls, H, W]
  ad::Var heat;    // G = sigmoid(F)
  double tau = 0.1;
};

// conv3x3 -> ReLU -> conv3x3 -> ReLU -> conv3x3 -> sigmoid.
ShapeHeatmaps shape_network(const bev::BevFeatureMap& lidar_bev, ad::Graph& g, ParameterStore& store,
                            const SalcConfig& cfg);

struct ShapeTargets {
  Tensor heat;                                    // T [N_cls, H, W] in [0, 1]
  std::vector<std::vector<PillarCoord>> centers;  // per class, cells where T == 1

  std::size_t num_instances() const;
};

// Rotated footprint of each box rasterized onto its class channel with value
// max(0.5, exp(-r^2 / (2 sigma^2))), r the cell distance to the box center and
// sigma = diagonal / 6 (cells). The cell holding the center is set to 1.
// Degenerate boxes are skipped with a warning; boxes whose center lies off the
// grid contribute their visible footprint but no center.
ShapeTargets make_shape_targets(std::span<const Box3D> labels, const GridConfig& grid, std::size_t num_classes,
                                std::vector<std::string>* warnings = nullptr);

// G >= tau, diagnostics only.
std::vector<std::uint8_t> threshold_filter(const Tensor& heat, double tau);
std::size_t mask_count(const std::vector<std::uint8_t>& mask);

// Penalty-reduced focal loss over G (clamped to [1e-6, 1 - 1e-6]) normalized by
// the number of T == 1 cells (at least 1).
ad::Var focal_shape_loss(ad::Var heat, const Tensor& targets, double gamma = 2.0, double beta = 4.0);

// Rows are classes, columns instances. Entries index rows of `embeddings`,
// -1 on invalid rows. S' is S with columns rotated by one.
struct InstanceMatrix {
  ad::Var embeddings;  // [K, N_cls], F gathered at every center cell, optionally unit-normalized
  ad::Var source;      // F, for graph access when K == 0
  std::vector<std::vector<int>> S;
  std::vector<std::vector<int>> S_prime;
  std::vector<bool> valid;
  std::size_t max_centers = 0;

  std::size_t valid_rows() const;
};

InstanceMatrix gather_instance_indicators(ad::Var logits, const ShapeTargets& targets, std::uint64_t seed,
                                          bool normalize = true);

// Instance contrastive loss. Row h of S pairs with row h of S' (positive);
// rows w != h of S' are negatives:
//   L = -(1/N_v) sum_h log( exp(d_hh / M^2) / sum_{w != h} exp(d_hw / M^2) )
//   d_hw = sum_m <S(h, m), S'(w, m)>
// Returns a constant 0 with fewer than two valid rows.
ad::Var mccont_loss(const InstanceMatrix& m);

struct ShapeLoss {
  ad::Var total;
  ad::Var focal;
  ad::Var mccont;
  bool mccont_active = false;
};

ShapeLoss shape_loss(const ShapeHeatmaps& maps, const ShapeTargets& targets, std::uint64_t seed,
                     const SalcConfig& cfg);

// concat(radar, G) -> conv3x3 -> ReLU, keeping the radar channel count.
bev::BevFeatureMap fuse_radar_bev(const bev::BevFeatureMap& radar, const ShapeHeatmaps& maps, ad::Graph& g,
                                  ParameterStore& store);

}  // namespace rlf::salc
