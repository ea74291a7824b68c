#pragma once

#include <array>
#include <vector>

#include "dpft/box.hpp"

namespace dpft {

enum class BoxMode { bev, three_d };

using Point2 = std::array<double, 2>;

// Signed shoelace area; positive for counter-clockwise polygons.
double polygon_area(const std::vector<Point2>& poly);

// Sutherland-Hodgman clip of `subject` against the convex CCW polygon `clip`.
std::vector<Point2> clip_convex(const std::vector<Point2>& subject, const std::vector<Point2>& clip);

double bev_intersection_area(const Box3D& a, const Box3D& b);

// Rotated-rectangle IoU of the ground-plane footprints.
double iou_bev(const Box3D& a, const Box3D& b);
// BEV intersection times vertical overlap over the union of volumes.
double iou_3d(const Box3D& a, const Box3D& b);
double box_iou(const Box3D& a, const Box3D& b, BoxMode mode);

}  // namespace dpft
