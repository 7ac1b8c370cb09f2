#pragma once

#include <array>
#include <string>
#include <string_view>

namespace rlf {

inline constexpr int kNumClasses = 3;
enum ObjectClass : int { kCar = 0, kPedestrian = 1, kCyclist = 2 };

std::string_view class_name(int class_id);
// Throws ParseError for unknown names.
int class_from_name(std::string_view name);

// Oriented box; (cx, cy, cz) is the geometric center, yaw is about +z from +x.
struct Box3D {
  double cx = 0.0, cy = 0.0, cz = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double yaw = 0.0;
  int class_id = 0;
  std::array<double, 2> velocity{0.0, 0.0};
};

struct Detection {
  Box3D box;
  double score = 0.0;
};

// Maps any angle to (-pi, pi].
double normalize_yaw(double yaw);

using Point2 = std::array<double, 2>;
// Counter-clockwise footprint corners.
std::array<Point2, 4> bev_corners(const Box3D& box);
bool bev_contains(const Box3D& box, double x, double y);

}  // namespace rlf
