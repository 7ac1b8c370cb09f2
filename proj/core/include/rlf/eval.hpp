#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlf/box.hpp"

namespace rlf::eval {

struct Region {
  std::string name = "all";
  bool bounded = false;
  double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;

  bool contains(const Box3D& b) const;
  static Region all() { return {}; }
  static Region corridor(double x_min = 0.0, double x_max = 25.6, double y_min = -4.0, double y_max = 4.0) {
    return {"corridor", true, x_min, x_max, y_min, y_max};
  }
};

struct EvalConfig {
  std::array<double, kNumClasses> iou_threshold{0.5, 0.25, 0.25};
  std::size_t recall_points = 41;
  Region corridor = Region::corridor();

  void validate() const;
};

struct EvalFrame {
  std::int64_t frame_id = 0;
  std::vector<Detection> detections;
  std::vector<Box3D> ground_truth;
};

// Box centers inside the region.
EvalFrame filter_region(const EvalFrame& frame, const Region& region);

struct PrPoint {
  double precision;
  double recall;
};

// Precision/recall after each detection of the class in descending score
// order, using greedy matching to the unmatched ground truth of highest IoU.
std::vector<PrPoint> precision_recall(std::span<const EvalFrame> frames, int class_id, const EvalConfig& cfg);

// Interpolated AP over `recall_points` equally spaced recall levels in [0, 1].
// nullopt when the class has no ground truth.
std::optional<double> average_precision(std::span<const EvalFrame> frames, int class_id, const EvalConfig& cfg);

struct RegionReport {
  std::string region;
  std::map<std::string, double> ap;  // defined classes only
  std::optional<double> map;
};

struct MapReport {
  std::vector<RegionReport> regions;
  std::vector<std::string> warnings;

  std::string to_json() const;
  std::string to_table() const;
};

RegionReport map_over_classes(std::span<const EvalFrame> frames, const Region& region, const EvalConfig& cfg,
                              std::vector<std::string>* warnings = nullptr);

// Entire area and corridor.
MapReport evaluate(std::span<const EvalFrame> frames, const EvalConfig& cfg);

}  // namespace rlf::eval
