#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace dpft {

// Oriented 3D box in the ego frame (x forward, y left, z up). `heading` is the
// yaw of the length axis, measured counter-clockwise from +x.
struct Box3D {
  std::array<double, 3> center{0, 0, 0};
  std::array<double, 3> size{1, 1, 1};  // length, width, height
  double heading = 0.0;
  int class_id = 0;
  double score = 1.0;

  double range() const { return std::hypot(center[0], center[1]); }
  double bottom() const { return center[2] - 0.5 * size[2]; }
  double top() const { return center[2] + 0.5 * size[2]; }
  double volume() const { return size[0] * size[1] * size[2]; }

  // BEV footprint corners, counter-clockwise.
  std::array<std::array<double, 2>, 4> bev_corners() const;
  // All eight corners: bottom face first, same ordering as bev_corners().
  std::array<std::array<double, 3>, 8> corners() const;
};

using DetectionSet = std::vector<Box3D>;

// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0) a += two_pi;
  double w = a - std::numbers::pi;
  return w >= std::numbers::pi ? -std::numbers::pi : w;
}

}  // namespace dpft
