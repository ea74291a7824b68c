#include "dpft/detection.hpp"

#include <algorithm>
#include <cmath>

#include "dpft/synthetic.hpp"

namespace dpft {

DetectionHead::DetectionHead(nn::ParamStore& store, nn::Initializer& init, int dim, int num_classes)
    : num_classes_(num_classes) {
  fc1_ = nn::Linear::create(store, init, "head.fc1", dim, dim);
  fc2_ = nn::Linear::create(store, init, "head.fc2", dim, dim);
  fc3_ = nn::Linear::create(store, init, "head.fc3", dim, kClassCol + num_classes);
  // Start from plausible sizes (keeps ReLU alive), a level heading and a low
  // foreground prior.
  Tensor& w3 = store.value(fc3_.weight);
  w3.scale_(0.1);
  Tensor& b = store.value(fc3_.bias);
  b[kSizeCol + 0] = 4.0;
  b[kSizeCol + 1] = 2.0;
  b[kSizeCol + 2] = 1.6;
  b[kCosCol] = 0.5;
  for (int c = 0; c < num_classes; ++c) b[kClassCol + c] = -std::log((1.0 - 0.01) / 0.01);
}

ag::Var DetectionHead::operator()(nn::Context& ctx, const ag::Var& features) const {
  ag::Var x = ag::relu(fc1_(ctx, features));
  x = ag::relu(fc2_(ctx, x));
  return fc3_(ctx, x);
}

std::vector<RawHeadOutput> split_head_output(const Tensor& raw, int num_classes) {
  const int n = raw.dim(0);
  if (raw.dim(1) != kClassCol + num_classes) throw ShapeError("head output width mismatch");
  std::vector<RawHeadOutput> out(n);
  for (int q = 0; q < n; ++q) {
    auto& r = out[q];
    for (int k = 0; k < 3; ++k) {
      r.center_raw[k] = raw.at(q, kCenterCol + k);
      r.size_raw[k] = raw.at(q, kSizeCol + k);
    }
    r.heading_raw = {raw.at(q, kSinCol), raw.at(q, kCosCol)};
    r.class_logits.resize(num_classes);
    for (int c = 0; c < num_classes; ++c) r.class_logits[c] = raw.at(q, kClassCol + c);
  }
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Box3D decode_box(const RawHeadOutput& raw, const std::array<double, 3>& query_polar) {
  Box3D box;
  const auto anchor = to_cartesian(query_polar);
  for (int k = 0; k < 3; ++k) {
    box.center[k] = anchor[k] + raw.center_raw[k];
    box.size[k] = std::max(std::max(raw.size_raw[k], 0.0), kMinBoxSize);
  }
  box.heading = wrap_angle(std::atan2(std::tanh(raw.heading_raw[0]), std::tanh(raw.heading_raw[1])));
  box.class_id = 0;
  box.score = 0.0;
  for (std::size_t c = 0; c < raw.class_logits.size(); ++c) {
    const double p = sigmoid(raw.class_logits[c]);
    if (c == 0 || p > box.score) {
      box.score = p;
      box.class_id = static_cast<int>(c);
    }
  }
  return box;
}

std::vector<Box3D> decode_boxes(const Tensor& raw, const Tensor& positions, int num_classes) {
  const auto heads = split_head_output(raw, num_classes);
  std::vector<Box3D> out;
  out.reserve(heads.size());
  for (std::size_t q = 0; q < heads.size(); ++q) {
    const int i = static_cast<int>(q);
    out.push_back(decode_box(heads[q], {positions.at(i, 0), positions.at(i, 1), positions.at(i, 2)}));
  }
  return out;
}

RawHeadOutput encode_box(const Box3D& box, const std::array<double, 3>& query_polar, int num_classes) {
  RawHeadOutput raw;
  const auto anchor = to_cartesian(query_polar);
  for (int k = 0; k < 3; ++k) {
    raw.center_raw[k] = box.center[k] - anchor[k];
    raw.size_raw[k] = box.size[k];
  }
  // Any positive multiple of (sin, cos) inside (-1, 1) decodes to the same angle.
  const double s = 0.5 * std::sin(box.heading), c = 0.5 * std::cos(box.heading);
  raw.heading_raw = {std::atanh(s), std::atanh(c)};
  raw.class_logits.assign(num_classes, -4.0);
  const double score = std::clamp(box.score, 1e-6, 1.0 - 1e-6);
  raw.class_logits.at(box.class_id) = std::log(score / (1.0 - score));
  return raw;
}

std::array<double, 3> clamp_to_fov(const std::array<double, 3>& polar, const FieldOfView& fov) {
  return {std::clamp(polar[0], 1e-3, fov.range_max), std::clamp(polar[1], -fov.fov_azimuth, fov.fov_azimuth),
          std::clamp(polar[2], -fov.fov_elevation, fov.fov_elevation)};
}

Tensor positions_from_boxes(const std::vector<Box3D>& boxes, const FieldOfView& fov) {
  const int n = static_cast<int>(boxes.size());
  Tensor pos({n, 3});
  for (int q = 0; q < n; ++q) {
    const auto p = clamp_to_fov(to_polar(boxes[q].center), fov);
    for (int k = 0; k < 3; ++k) pos.at(q, k) = p[k];
  }
  return pos;
}

}  // namespace dpft
