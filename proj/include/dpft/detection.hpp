#pragma once

#include <array>
#include <vector>

#include "dpft/box.hpp"
#include "dpft/nn.hpp"

namespace dpft {

// Column layout of the head output: center(3) size(3) sin/cos logits(2) classes.
inline constexpr int kCenterCol = 0;
inline constexpr int kSizeCol = 3;
inline constexpr int kSinCol = 6;
inline constexpr int kCosCol = 7;
inline constexpr int kClassCol = 8;
inline constexpr double kMinBoxSize = 0.01;

struct RawHeadOutput {
  std::array<double, 3> center_raw{};
  std::array<double, 3> size_raw{};
  std::array<double, 2> heading_raw{};  // sin-logit, cos-logit
  std::vector<double> class_logits;
};

// Three linear layers with ReLU between; activations are applied in decode.
class DetectionHead {
 public:
  DetectionHead() = default;
  DetectionHead(nn::ParamStore& store, nn::Initializer& init, int dim, int num_classes);

  ag::Var operator()(nn::Context& ctx, const ag::Var& features) const;  // [N, 8 + classes]
  int num_classes() const { return num_classes_; }
  int output_width() const { return kClassCol + num_classes_; }

 private:
  int num_classes_ = 1;
  nn::Linear fc1_, fc2_, fc3_;
};

std::vector<RawHeadOutput> split_head_output(const Tensor& raw, int num_classes);

double sigmoid(double x);
// center = query cartesian + center_raw; size = max(relu, 0.01);
// heading = atan2(tanh(sin), tanh(cos)); class = argmax sigmoid, score = that value.
Box3D decode_box(const RawHeadOutput& raw, const std::array<double, 3>& query_polar);
std::vector<Box3D> decode_boxes(const Tensor& raw, const Tensor& positions, int num_classes);

// Inverse of decode_box for boxes with size > 0.01: the returned logits decode
// back to `box` (heading recovered through atanh of a scaled sin/cos pair).
RawHeadOutput encode_box(const Box3D& box, const std::array<double, 3>& query_polar, int num_classes);

struct FieldOfView {
  double range_max = 72.0;
  double fov_azimuth = 0.872664626;
  double fov_elevation = 0.261799388;
};

// Polar position of a decoded centre, clamped to the field of view.
std::array<double, 3> clamp_to_fov(const std::array<double, 3>& polar, const FieldOfView& fov);
Tensor positions_from_boxes(const std::vector<Box3D>& boxes, const FieldOfView& fov);

}  // namespace dpft
