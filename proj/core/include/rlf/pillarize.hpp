#pragma once

#include <compare>
#include <cstdint>
#include <span>
#include <vector>

#include "rlf/tensor.hpp"

namespace rlf {

enum class Modality { radar, lidar };

struct RadarPoint {
  float x = 0, y = 0, z = 0;
  float v_r = 0;  // relative radial velocity, m/s
  float v_a = 0;  // ego-motion compensated radial velocity, m/s
  float rcs = 0;  // dBsm
};

struct LidarPoint {
  float x = 0, y = 0, z = 0;
  float intensity = 0;
};

// BEV detection grid. Rows index y, columns index x.
struct GridConfig {
  double x_min = 0.0, x_max = 25.6;
  double y_min = -12.8, y_max = 12.8;
  double z_min = -1.0, z_max = 3.0;
  double pillar_size = 0.4;
  int max_pillars = 4096;
  int max_points_per_pillar = 16;

  void validate() const;
  int rows() const;
  int cols() const;
  bool in_range(double x, double y, double z) const;
  double cell_center_x(int col) const { return x_min + (col + 0.5) * pillar_size; }
  double cell_center_y(int row) const { return y_min + (row + 0.5) * pillar_size; }
  double z_center() const { return 0.5 * (z_min + z_max); }
};

struct PillarCoord {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const PillarCoord&, const PillarCoord&) = default;
};

// Augmented per-point layout:
//   radar: [x, y, z, v_r, v_a, rcs, dx_c, dy_c, dz_c, dx_m, dy_m, dz_m]
//   lidar: [x, y, z, intensity, dx_c, dy_c, dz_c, dx_m, dy_m, dz_m]
// where *_c are offsets to the pillar center and *_m offsets to the mean of
// the pillar's retained points. Radar stores the indicative channels
// (v_r, v_a, rcs) separately from the spatial remainder.
inline constexpr std::size_t kIndicativeChannels = 3;
inline constexpr std::size_t kRadarSpatialChannels = 9;
inline constexpr std::size_t kRadarAugmentedChannels = 12;
inline constexpr std::size_t kLidarChannels = 10;

struct PillarSet {
  Modality modality = Modality::lidar;
  Tensor spatial;     // [N, P, C]; rows past num_points are zero
  Tensor indicative;  // radar only: [N, P, 3]
  std::vector<PillarCoord> coords;
  std::vector<int> num_points;

  std::size_t size() const { return coords.size(); }
};

// Points are subsampled uniformly (seeded per cell) down to P; when more than
// max_pillars cells are occupied the densest are kept. Output is ordered by
// (row, col).
PillarSet build_pillars(std::span<const RadarPoint> points, const GridConfig& grid, std::uint64_t seed);
PillarSet build_pillars(std::span<const LidarPoint> points, const GridConfig& grid, std::uint64_t seed);

// p_r^c; ContractError on a LiDAR set.
Tensor indicative_slice(const PillarSet& pillars);
// Reassembles the full augmented layout from the spatial and indicative parts.
Tensor augmented_features(const PillarSet& pillars);

}  // namespace rlf
