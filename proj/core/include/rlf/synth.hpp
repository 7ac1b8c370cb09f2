#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rlf/box.hpp"
#include "rlf/pillarize.hpp"

// Synthetic paired radar/LiDAR scenes. Class-conditional speed and RCS models
// are qualitative: cars are fast or parked and reflect strongly, pedestrians
// are slow and weak, cyclists sit in between.
namespace rlf::synth {

struct ClassPrior {
  int min_count = 0;
  int max_count = 0;
  double l = 1.0, w = 1.0, h = 1.0;
  double size_jitter = 0.05;  // relative sd
  double speed_min = 0.0, speed_max = 0.0;
  double stationary_fraction = 0.0;
  double rcs_mean = 0.0, rcs_sd = 1.0;
  double intensity = 0.5;
};

struct SceneSpec {
  std::array<ClassPrior, kNumClasses> classes{{
      {1, 3, 4.2, 1.8, 1.6, 0.05, 0.0, 15.0, 0.4, 10.0, 4.0, 0.6},
      {1, 3, 0.6, 0.6, 1.7, 0.05, 0.0, 2.0, 0.2, -4.0, 3.0, 0.3},
      {1, 2, 1.8, 0.6, 1.7, 0.05, 1.0, 8.0, 0.0, 3.0, 3.0, 0.45},
  }};
  double ego_speed_min = 0.0;
  double ego_speed_max = 10.0;
  // Objects are placed with their footprint inside this area.
  double area_x_min = 1.0, area_x_max = 25.2, area_y_min = -12.4, area_y_max = 12.4;
  double min_gap = 0.3;  // clearance between footprints, meters
  int placement_retries = 50;

  double lidar_surface_density = 15.0;  // points per m^2 of visible surface at 10 m
  double lidar_ground_points = 500.0;   // mean count
  double lidar_noise = 0.02;
  double sparse_fraction = 0.1;         // objects with almost no LiDAR return

  double radar_density = 0.8;           // mean points per m^2 of footprint
  double radar_min_mean = 1.5;
  double radar_position_noise = 0.1;
  double clutter_rate = 25.0;           // mean stationary clutter points
  double velocity_noise = 0.1;          // m/s

  std::uint64_t seed = 0;

  void validate() const;
};

struct Frame {
  std::int64_t frame_id = 0;
  std::array<double, 2> ego_velocity{0.0, 0.0};
  std::vector<RadarPoint> radar;
  std::vector<LidarPoint> lidar;
  std::vector<Box3D> labels;
  std::vector<std::uint8_t> sparse;  // per label: LiDAR return deliberately thinned

  friend bool operator==(const Frame&, const Frame&);
};

// (spec.seed, frame_id) fully determine the frame. All values are exactly
// representable as 32-bit floats.
Frame generate_frame(const SceneSpec& spec, std::int64_t frame_id, std::vector<std::string>* warnings = nullptr);

std::string scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const std::string& text);

}  // namespace rlf::synth
