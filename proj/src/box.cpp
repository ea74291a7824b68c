#include "dpft/box.hpp"

namespace dpft {

std::array<std::array<double, 2>, 4> Box3D::bev_corners() const {
  const double c = std::cos(heading), s = std::sin(heading);
  const double hl = 0.5 * size[0], hw = 0.5 * size[1];
  const std::array<std::array<double, 2>, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<std::array<double, 2>, 4> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {center[0] + c * local[i][0] - s * local[i][1],
              center[1] + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

std::array<std::array<double, 3>, 8> Box3D::corners() const {
  const auto bev = bev_corners();
  std::array<std::array<double, 3>, 8> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {bev[i][0], bev[i][1], bottom()};
    out[i + 4] = {bev[i][0], bev[i][1], top()};
  }
  return out;
}

}  // namespace dpft
