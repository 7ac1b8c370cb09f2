#pragma once

#include <span>
#include <vector>

#include "rlf/box.hpp"

namespace rlf {

// Area of a simple polygon (shoelace, absolute value).
double polygon_area(std::span<const Point2> poly);

// Sutherland-Hodgman clip of `subject` by the convex counter-clockwise `clip`.
std::vector<Point2> clip_convex(std::span<const Point2> subject, std::span<const Point2> clip);

// Exact intersection-over-union of the two rotated BEV rectangles.
double rotated_iou_bev(const Box3D& a, const Box3D& b);

}  // namespace rlf
