#pragma once

// Radar cube reduction to the two 2D perspectives, and camera input prep.

#include <array>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "dpft/tensor.hpp"

namespace dpft {

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense power grid indexed (range, azimuth, elevation, doppler).
struct RadarCube {
  Tensor power;                       // [R, A, E, D]
  std::vector<double> range_axis;     // meters, bin centres
  std::vector<double> azimuth_axis;   // radians
  std::vector<double> elevation_axis; // radians
  std::vector<double> doppler_axis;   // m/s

  int range_bins() const { return power.dim(0); }
  int azimuth_bins() const { return power.dim(1); }
  int elevation_bins() const { return power.dim(2); }
  int doppler_bins() const { return power.dim(3); }

  double& at(int r, int a, int e, int d) {
    return power[((static_cast<std::size_t>(r) * azimuth_bins() + a) * elevation_bins() + e) *
                     doppler_bins() + d];
  }
  double at(int r, int a, int e, int d) const {
    return power[((static_cast<std::size_t>(r) * azimuth_bins() + a) * elevation_bins() + e) *
                     doppler_bins() + d];
  }

  // Throws InvalidInput on negative/non-finite power, axis length mismatch or
  // non-monotone axes.
  void validate() const;
};

// Channel layout of both projected maps.
enum ProjectionChannel : int {
  kAmpMax = 0,
  kAmpMedian = 1,
  kAmpVar = 2,
  kDopMax = 3,
  kDopMedian = 4,
  kDopVar = 5,
  kProjectionChannels = 6,
};

struct DualProjection {
  Tensor ra;  // [range, azimuth, 6]
  Tensor ae;  // [azimuth, elevation, 6]
};

struct ReducedStats {
  double max = 0.0;
  double median = 0.0;
  double variance = 0.0;
};

enum class CubeAxis { range = 0, azimuth = 1, elevation = 2, doppler = 3 };

// Removes `margin` bins from both ends of one axis (range by default).
RadarCube trim_artifacts(const RadarCube& cube, int margin = 3, CubeAxis axis = CubeAxis::range);

// Maximum, median (mean of the middle pair for even n) and population variance.
ReducedStats reduce_stats(std::span<const double> values);

struct ProjectionOptions {
  bool log_amplitude = false;  // log1p-compress power before reduction
};

// RA cell (r,a): amplitude stats over all (e,d); doppler stats over the
// per-elevation argmax-doppler velocities. AE cell (a,e): amplitude over all
// (r,d); doppler over the per-range argmax velocities. Ties pick the lowest bin.
DualProjection project_cube(const RadarCube& cube, const ProjectionOptions& options = {});

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

// Rigid ego -> camera transform: p_cam = rotation * p_ego + translation.
struct CameraExtrinsics {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> translation{0, 0, 0};

  std::array<double, 3> apply(const std::array<double, 3>& p) const;
};

// Image coordinates are continuous: pixel (row i, col j) covers [j, j+1) x [i, i+1).
struct CameraFrame {
  Tensor pixels;  // [H, W, 3] in [0, 1]
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics;

  int height() const { return pixels.dim(0); }
  int width() const { return pixels.dim(1); }
  void validate() const;
};

// Bilinear resize to target_height, width scaled by the same factor (rounded).
// fx, cx follow the width ratio; fy, cy the height ratio.
CameraFrame resize_image(const CameraFrame& frame, int target_height);

// Cube container: little-endian, see README for the byte layout.
void write_cube(const std::filesystem::path& path, const RadarCube& cube);
RadarCube read_cube(const std::filesystem::path& path);

}  // namespace dpft
