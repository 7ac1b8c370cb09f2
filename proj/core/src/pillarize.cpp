#include "rlf/pillarize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rlf/errors.hpp"
#include "rlf/random.hpp"

namespace rlf {
namespace {

int cells_along(double lo, double hi, double size, const char* axis) {
  const double n = (hi - lo) / size;
  const double r = std::round(n);
  if (!(hi > lo) || r < 1.0 || std::abs(n - r) > 1e-6) {
    throw ConfigError(std::string("grid ") + axis + " range is not a positive multiple of pillar_size");
  }
  return static_cast<int>(r);
}

struct RawPoint {
  double x, y, z;
  std::array<double, 3> extra;
};

RawPoint raw(const RadarPoint& p) { return {p.x, p.y, p.z, {p.v_r, p.v_a, p.rcs}}; }
RawPoint raw(const LidarPoint& p) { return {p.x, p.y, p.z, {p.intensity, 0.0, 0.0}}; }

bool finite(const RawPoint& p) {
  return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z) && std::isfinite(p.extra[0]) &&
         std::isfinite(p.extra[1]) && std::isfinite(p.extra[2]);
}

template <typename PointT>
PillarSet build(std::span<const PointT> points, const GridConfig& grid, std::uint64_t seed, Modality modality) {
  grid.validate();
  const int rows = grid.rows(), cols = grid.cols();
  const std::size_t P = static_cast<std::size_t>(grid.max_points_per_pillar);

  std::vector<std::vector<std::uint32_t>> cell_points(static_cast<std::size_t>(rows) * cols);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const RawPoint p = raw(points[i]);
    if (!finite(p)) throw NumericError("non-finite point at index " + std::to_string(i));
    if (!grid.in_range(p.x, p.y, p.z)) continue;
    const int col = std::min(cols - 1, static_cast<int>(std::floor((p.x - grid.x_min) / grid.pillar_size)));
    const int row = std::min(rows - 1, static_cast<int>(std::floor((p.y - grid.y_min) / grid.pillar_size)));
    cell_points[static_cast<std::size_t>(row) * cols + col].push_back(static_cast<std::uint32_t>(i));
  }

  std::vector<std::size_t> occupied;
  for (std::size_t c = 0; c < cell_points.size(); ++c)
    if (!cell_points[c].empty()) occupied.push_back(c);
  if (occupied.size() > static_cast<std::size_t>(grid.max_pillars)) {
    std::stable_sort(occupied.begin(), occupied.end(), [&](std::size_t a, std::size_t b) {
      return cell_points[a].size() > cell_points[b].size();
    });
    occupied.resize(static_cast<std::size_t>(grid.max_pillars));
    std::sort(occupied.begin(), occupied.end());
  }

  const bool is_radar = modality == Modality::radar;
  const std::size_t C = is_radar ? kRadarSpatialChannels : kLidarChannels;
  const std::size_t N = occupied.size();
  PillarSet out;
  out.modality = modality;
  out.spatial = Tensor({N, P, C}, 0.0);
  if (is_radar) out.indicative = Tensor({N, P, kIndicativeChannels}, 0.0);
  out.coords.reserve(N);
  out.num_points.reserve(N);

  for (std::size_t n = 0; n < N; ++n) {
    const std::size_t cell = occupied[n];
    const int row = static_cast<int>(cell / static_cast<std::size_t>(cols));
    const int col = static_cast<int>(cell % static_cast<std::size_t>(cols));
    std::vector<std::uint32_t> kept = cell_points[cell];
    if (kept.size() > P) {
      Rng rng(derive_seed(seed, cell));
      for (std::size_t i = 0; i < P; ++i) std::swap(kept[i], kept[i + rng.index(kept.size() - i)]);
      kept.resize(P);
      std::sort(kept.begin(), kept.end());
    }
    out.coords.push_back({row, col});
    out.num_points.push_back(static_cast<int>(kept.size()));

    double mx = 0.0, my = 0.0, mz = 0.0;
    for (std::uint32_t i : kept) {
      const RawPoint p = raw(points[i]);
      mx += p.x;
      my += p.y;
      mz += p.z;
    }
    const double inv = 1.0 / static_cast<double>(kept.size());
    mx *= inv;
    my *= inv;
    mz *= inv;
    const double cx = grid.cell_center_x(col), cy = grid.cell_center_y(row), cz = grid.z_center();

    for (std::size_t k = 0; k < kept.size(); ++k) {
      const RawPoint p = raw(points[kept[k]]);
      double* f = out.spatial.data().data() + (n * P + k) * C;
      std::size_t j = 0;
      f[j++] = p.x;
      f[j++] = p.y;
      f[j++] = p.z;
      if (is_radar) {
        double* ind = out.indicative.data().data() + (n * P + k) * kIndicativeChannels;
        ind[0] = p.extra[0];
        ind[1] = p.extra[1];
        ind[2] = p.extra[2];
      } else {
        f[j++] = p.extra[0];
      }
      f[j++] = p.x - cx;
      f[j++] = p.y - cy;
      f[j++] = p.z - cz;
      f[j++] = p.x - mx;
      f[j++] = p.y - my;
      f[j++] = p.z - mz;
    }
  }
  return out;
}

}  // namespace

void GridConfig::validate() const {
  if (!(pillar_size > 0.0)) throw ConfigError("pillar_size must be positive");
  cells_along(x_min, x_max, pillar_size, "x");
  cells_along(y_min, y_max, pillar_size, "y");
  if (!(z_max > z_min)) throw ConfigError("grid z range is empty");
  if (max_points_per_pillar < 1) throw ConfigError("max_points_per_pillar must be >= 1");
  if (max_pillars < 1) throw ConfigError("max_pillars must be >= 1");
}

int GridConfig::rows() const { return cells_along(y_min, y_max, pillar_size, "y"); }
int GridConfig::cols() const { return cells_along(x_min, x_max, pillar_size, "x"); }

bool GridConfig::in_range(double x, double y, double z) const {
  return x >= x_min && x < x_max && y >= y_min && y < y_max && z >= z_min && z < z_max;
}

PillarSet build_pillars(std::span<const RadarPoint> points, const GridConfig& grid, std::uint64_t seed) {
  return build(points, grid, seed, Modality::radar);
}

PillarSet build_pillars(std::span<const LidarPoint> points, const GridConfig& grid, std::uint64_t seed) {
  return build(points, grid, seed, Modality::lidar);
}

Tensor indicative_slice(const PillarSet& pillars) {
  if (pillars.modality != Modality::radar) throw ContractError("indicative_slice requires a radar pillar set");
  return pillars.indicative;
}

Tensor augmented_features(const PillarSet& pillars) {
  if (pillars.modality == Modality::lidar) return pillars.spatial;
  const auto& s = pillars.spatial.shape();
  const std::size_t N = s[0], P = s[1];
  Tensor out({N, P, kRadarAugmentedChannels});
  for (std::size_t r = 0; r < N * P; ++r) {
    const double* sp = pillars.spatial.data().data() + r * kRadarSpatialChannels;
    const double* ind = pillars.indicative.data().data() + r * kIndicativeChannels;
    double* o = out.data().data() + r * kRadarAugmentedChannels;
    std::copy_n(sp, 3, o);
    std::copy_n(ind, 3, o + 3);
    std::copy_n(sp + 3, 6, o + 6);
  }
  return out;
}

}  // namespace rlf
