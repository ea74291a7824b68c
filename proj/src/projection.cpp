#include "dpft/projection.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace dpft {

namespace {

void check_axis(const std::vector<double>& axis, int expected, const char* name) {
  if (static_cast<int>(axis.size()) != expected) {
    throw InvalidInput(std::string(name) + " axis length " + std::to_string(axis.size()) +
                       " does not match cube dimension " + std::to_string(expected));
  }
  for (std::size_t i = 1; i < axis.size(); ++i) {
    if (!(axis[i] > axis[i - 1])) throw InvalidInput(std::string(name) + " axis not strictly increasing");
  }
}

std::vector<double>& axis_ref(RadarCube& cube, CubeAxis axis) {
  switch (axis) {
    case CubeAxis::range: return cube.range_axis;
    case CubeAxis::azimuth: return cube.azimuth_axis;
    case CubeAxis::elevation: return cube.elevation_axis;
    case CubeAxis::doppler: return cube.doppler_axis;
  }
  return cube.range_axis;
}

// Lowest index of the maximum element.
int argmax_first(const double* v, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

void store_stats(double* cell, const ReducedStats& amp, const ReducedStats& dop) {
  cell[kAmpMax] = amp.max;
  cell[kAmpMedian] = amp.median;
  cell[kAmpVar] = amp.variance;
  cell[kDopMax] = dop.max;
  cell[kDopMedian] = dop.median;
  cell[kDopVar] = dop.variance;
}

constexpr char kCubeMagic[8] = {'D', 'P', 'F', 'T', 'C', 'U', 'B', 'E'};
constexpr std::uint32_t kCubeVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "cube IO assumes a little-endian host");

template <typename T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated cube file: " + path.string());
  return v;
}

void put_floats(std::ofstream& os, const double* data, std::size_t n) {
  std::vector<float> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(data[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
}

std::vector<double> get_floats(std::ifstream& is, std::size_t n, const std::filesystem::path& path) {
  std::vector<float> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw std::runtime_error("truncated cube file: " + path.string());
  return {buf.begin(), buf.end()};
}

}  // namespace

void RadarCube::validate() const {
  if (power.rank() != 4) throw InvalidInput("radar cube must be 4D, got " + shape_str(power.shape()));
  check_axis(range_axis, range_bins(), "range");
  check_axis(azimuth_axis, azimuth_bins(), "azimuth");
  check_axis(elevation_axis, elevation_bins(), "elevation");
  check_axis(doppler_axis, doppler_bins(), "doppler");
  for (double v : power.values()) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidInput("radar power must be finite and >= 0");
  }
}

RadarCube trim_artifacts(const RadarCube& cube, int margin, CubeAxis axis) {
  if (margin < 0) throw InvalidInput("trim margin must be >= 0");
  const int ax = static_cast<int>(axis);
  const Shape& s = cube.power.shape();
  if (s.size() != 4) throw InvalidInput("radar cube must be 4D");
  if (s[ax] <= 2 * margin) throw InvalidInput("axis too short to trim");
  if (margin == 0) return cube;

  Shape out_shape = s;
  out_shape[ax] -= 2 * margin;
  RadarCube out = cube;
  out.power = Tensor(out_shape);
  // Copy as [outer, axis, inner] blocks.
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[i];
  for (int i = ax + 1; i < 4; ++i) inner *= s[i];
  const std::size_t n_in = s[ax], n_out = out_shape[ax];
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = cube.power.data() + (o * n_in + margin) * inner;
    std::copy(src, src + n_out * inner, out.power.data() + o * n_out * inner);
  }
  auto& axis_vec = axis_ref(out, axis);
  axis_vec = std::vector<double>(axis_vec.begin() + margin, axis_vec.end() - margin);
  return out;
}

ReducedStats reduce_stats(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("reduce_stats: empty sequence");
  const std::size_t n = values.size();
  ReducedStats st;
  double mean = 0.0;
  st.max = values[0];
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidInput("reduce_stats: non-finite value");
    st.max = std::max(st.max, v);
    mean += v;
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  st.variance = var / static_cast<double>(n);

  std::vector<double> buf(values.begin(), values.end());
  const std::size_t mid = n / 2;
  std::nth_element(buf.begin(), buf.begin() + mid, buf.end());
  const double upper = buf[mid];
  if (n % 2 == 1) {
    st.median = upper;
  } else {
    const double lower = *std::max_element(buf.begin(), buf.begin() + mid);
    st.median = 0.5 * (lower + upper);
  }
  return st;
}

DualProjection project_cube(const RadarCube& cube, const ProjectionOptions& options) {
  cube.validate();
  const int nr = cube.range_bins(), na = cube.azimuth_bins(), ne = cube.elevation_bins(),
            nd = cube.doppler_bins();

  auto amp = [&](double p) { return options.log_amplitude ? std::log1p(p) : p; };

  // Per-(r,a,e) argmax-doppler velocity, shared by both projections.
  std::vector<double> peak_velocity(static_cast<std::size_t>(nr) * na * ne);
  for (int r = 0; r < nr; ++r)
    for (int a = 0; a < na; ++a)
      for (int e = 0; e < ne; ++e) {
        const double* spec = cube.power.data() + (((static_cast<std::size_t>(r) * na + a) * ne + e) * nd);
        peak_velocity[(static_cast<std::size_t>(r) * na + a) * ne + e] =
            cube.doppler_axis[argmax_first(spec, nd)];
      }
  auto vel = [&](int r, int a, int e) {
    return peak_velocity[(static_cast<std::size_t>(r) * na + a) * ne + e];
  };

  DualProjection out{Tensor({nr, na, kProjectionChannels}), Tensor({na, ne, kProjectionChannels})};

  std::vector<double> amps;
  std::vector<double> dops;
  amps.reserve(static_cast<std::size_t>(std::max(ne, nr)) * nd);
  for (int r = 0; r < nr; ++r) {
    for (int a = 0; a < na; ++a) {
      amps.clear();
      dops.clear();
      for (int e = 0; e < ne; ++e) {
        for (int d = 0; d < nd; ++d) amps.push_back(amp(cube.at(r, a, e, d)));
        dops.push_back(vel(r, a, e));
      }
      store_stats(&out.ra.at(r, a, 0), reduce_stats(amps), reduce_stats(dops));
    }
  }
  for (int a = 0; a < na; ++a) {
    for (int e = 0; e < ne; ++e) {
      amps.clear();
      dops.clear();
      for (int r = 0; r < nr; ++r) {
        for (int d = 0; d < nd; ++d) amps.push_back(amp(cube.at(r, a, e, d)));
        dops.push_back(vel(r, a, e));
      }
      store_stats(&out.ae.at(a, e, 0), reduce_stats(amps), reduce_stats(dops));
    }
  }
  return out;
}

std::array<double, 3> CameraExtrinsics::apply(const std::array<double, 3>& p) const {
  const auto& R = rotation;
  return {R[0] * p[0] + R[1] * p[1] + R[2] * p[2] + translation[0],
          R[3] * p[0] + R[4] * p[1] + R[5] * p[2] + translation[1],
          R[6] * p[0] + R[7] * p[1] + R[8] * p[2] + translation[2]};
}

void CameraFrame::validate() const {
  if (pixels.rank() != 3 || pixels.dim(2) != 3)
    throw InvalidInput("camera pixels must be [H, W, 3], got " + shape_str(pixels.shape()));
  if (!(intrinsics.fx > 0 && intrinsics.fy > 0)) throw InvalidInput("focal lengths must be > 0");
  if (intrinsics.cx < 0 || intrinsics.cx >= width() || intrinsics.cy < 0 || intrinsics.cy >= height())
    throw InvalidInput("principal point outside image");
  const auto& R = extrinsics.rotation;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += R[i * 3 + k] * R[j * 3 + k];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-6) throw InvalidInput("rotation not orthonormal");
    }
  const double det = R[0] * (R[4] * R[8] - R[5] * R[7]) - R[1] * (R[3] * R[8] - R[5] * R[6]) +
                     R[2] * (R[3] * R[7] - R[4] * R[6]);
  if (std::abs(det - 1.0) > 1e-6) throw InvalidInput("rotation determinant must be +1");
}

CameraFrame resize_image(const CameraFrame& frame, int target_height) {
  if (target_height < 2) throw InvalidInput("target height must be >= 2");
  const int h = frame.height(), w = frame.width();
  if (target_height == h) return frame;
  const double sy = static_cast<double>(target_height) / h;
  const int target_width = std::max(1, static_cast<int>(std::lround(w * sy)));
  const double sx = static_cast<double>(target_width) / w;

  CameraFrame out = frame;
  out.pixels = Tensor({target_height, target_width, 3});
  for (int i = 0; i < target_height; ++i) {
    const double y = std::clamp((i + 0.5) / sy - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(std::floor(y));
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = y - y0;
    for (int j = 0; j < target_width; ++j) {
      const double x = std::clamp((j + 0.5) / sx - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(std::floor(x));
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = x - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * frame.pixels.at(y0, x0, c) + wx * frame.pixels.at(y0, x1, c);
        const double bot = (1 - wx) * frame.pixels.at(y1, x0, c) + wx * frame.pixels.at(y1, x1, c);
        out.pixels.at(i, j, c) = (1 - wy) * top + wy * bot;
      }
    }
  }
  out.intrinsics.fx *= sx;
  out.intrinsics.cx *= sx;
  out.intrinsics.fy *= sy;
  out.intrinsics.cy *= sy;
  return out;
}

void write_cube(const std::filesystem::path& path, const RadarCube& cube) {
  cube.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os.write(kCubeMagic, sizeof(kCubeMagic));
  put(os, kCubeVersion);
  for (int d : cube.power.shape()) put(os, static_cast<std::uint32_t>(d));
  put_floats(os, cube.range_axis.data(), cube.range_axis.size());
  put_floats(os, cube.azimuth_axis.data(), cube.azimuth_axis.size());
  put_floats(os, cube.elevation_axis.data(), cube.elevation_axis.size());
  put_floats(os, cube.doppler_axis.data(), cube.doppler_axis.size());
  put_floats(os, cube.power.data(), cube.power.size());
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

RadarCube read_cube(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open cube file: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCubeMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a cube file: " + path.string());
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCubeVersion)
    throw std::runtime_error("unsupported cube version " + std::to_string(version) + " in " +
                             path.string());
  Shape shape(4);
  for (int& d : shape) d = static_cast<int>(get<std::uint32_t>(is, path));
  RadarCube cube;
  cube.range_axis = get_floats(is, shape[0], path);
  cube.azimuth_axis = get_floats(is, shape[1], path);
  cube.elevation_axis = get_floats(is, shape[2], path);
  cube.doppler_axis = get_floats(is, shape[3], path);
  cube.power = Tensor(shape, get_floats(is, shape_numel(shape), path));
  cube.validate();
  return cube;
}

}  // namespace dpft
