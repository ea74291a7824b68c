#include "dpft/iou.hpp"

#include <algorithm>
#include <cmath>

namespace dpft {

namespace {

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

Point2 segment_line_intersection(const Point2& p, const Point2& q, const Point2& a, const Point2& b) {
  const double dp = cross(a, b, p);
  const double dq = cross(a, b, q);
  const double t = dp / (dp - dq);
  return {p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])};
}

std::vector<Point2> footprint(const Box3D& b) {
  const auto c = b.bev_corners();
  return {c.begin(), c.end()};
}

}  // namespace

double polygon_area(const std::vector<Point2>& poly) {
  double a = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    a += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * a;
}

std::vector<Point2> clip_convex(const std::vector<Point2>& subject, const std::vector<Point2>& clip) {
  std::vector<Point2> out = subject;
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !out.empty(); ++e) {
    const Point2& a = clip[e];
    const Point2& b = clip[(e + 1) % m];
    std::vector<Point2> in = std::move(out);
    out.clear();
    const std::size_t n = in.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point2& p = in[i];
      const Point2& q = in[(i + 1) % n];
      const bool p_in = cross(a, b, p) >= 0.0;
      const bool q_in = cross(a, b, q) >= 0.0;
      if (p_in) out.push_back(p);
      if (p_in != q_in) out.push_back(segment_line_intersection(p, q, a, b));
    }
  }
  return out;
}

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto poly = clip_convex(footprint(a), footprint(b));
  if (poly.size() < 3) return 0.0;
  return std::max(0.0, polygon_area(poly));
}

double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection_area(a, b);
  const double uni = a.size[0] * a.size[1] + b.size[0] * b.size[1] - inter;
  if (uni <= 0.0 || inter <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double dz = std::min(a.top(), b.top()) - std::max(a.bottom(), b.bottom());
  if (dz <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dz;
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0 || inter <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double box_iou(const Box3D& a, const Box3D& b, BoxMode mode) {
  return mode == BoxMode::bev ? iou_bev(a, b) : iou_3d(a, b);
}

}  // namespace dpft
