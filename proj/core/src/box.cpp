#include "rlf/box.hpp"

#include <cmath>
#include <numbers>

#include "rlf/errors.hpp"

namespace rlf {

namespace {
constexpr std::array<std::string_view, kNumClasses> kClassNames{"car", "pedestrian", "cyclist"};
}

std::string_view class_name(int class_id) {
  if (class_id < 0 || class_id >= kNumClasses) throw IndexError("class id " + std::to_string(class_id));
  return kClassNames[static_cast<std::size_t>(class_id)];
}

int class_from_name(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (kClassNames[static_cast<std::size_t>(i)] == name) return i;
  throw ParseError("unknown class '" + std::string(name) + "'");
}

double normalize_yaw(double yaw) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double y = std::fmod(yaw, kTwoPi);
  if (y <= -std::numbers::pi) y += kTwoPi;
  if (y > std::numbers::pi) y -= kTwoPi;
  return y;
}

std::array<Point2, 4> bev_corners(const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = 0.5 * box.l, hw = 0.5 * box.w;
  const std::array<Point2, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Point2, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {box.cx + c * local[i][0] - s * local[i][1], box.cy + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

bool bev_contains(const Box3D& box, double x, double y) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double dx = x - box.cx, dy = y - box.cy;
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  return std::abs(u) <= 0.5 * box.l && std::abs(v) <= 0.5 * box.w;
}

}  // namespace rlf
