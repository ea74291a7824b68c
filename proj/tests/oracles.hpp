#pragma once

// Straightforward reference implementations used to cross-check the library.
// Each one is written from the definitions, not from the library code paths.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "dpft/box.hpp"
#include "dpft/fusion.hpp"
#include "dpft/nn.hpp"
#include "dpft/projection.hpp"
#include "dpft/tensor.hpp"

namespace oracle {

using dpft::Tensor;

inline std::array<double, 3> stats(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double mx = v.back();
  const double med = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mx, med, var / static_cast<double>(n)};
}

// Nested-loop version of the two radar projections ([R, A, 6] and [A, E, 6]).
inline std::pair<Tensor, Tensor> project_cube(const dpft::RadarCube& cube) {
  const int R = cube.range_bins(), A = cube.azimuth_bins(), E = cube.elevation_bins(), D = cube.doppler_bins();
  Tensor ra({R, A, 6}), ae({A, E, 6});
  auto argmax_velocity = [&](int r, int a, int e) {
    int best = 0;
    for (int d = 1; d < D; ++d)
      if (cube.at(r, a, e, d) > cube.at(r, a, e, best)) best = d;
    return cube.doppler_axis[best];
  };
  for (int r = 0; r < R; ++r)
    for (int a = 0; a < A; ++a) {
      std::vector<double> amp, vel;
      for (int e = 0; e < E; ++e) {
        for (int d = 0; d < D; ++d) amp.push_back(cube.at(r, a, e, d));
        vel.push_back(argmax_velocity(r, a, e));
      }
      const auto s1 = stats(amp), s2 = stats(vel);
      for (int c = 0; c < 3; ++c) {
        ra.at(r, a, c) = s1[c];
        ra.at(r, a, 3 + c) = s2[c];
      }
    }
  for (int a = 0; a < A; ++a)
    for (int e = 0; e < E; ++e) {
      std::vector<double> amp, vel;
      for (int r = 0; r < R; ++r) {
        for (int d = 0; d < D; ++d) amp.push_back(cube.at(r, a, e, d));
        vel.push_back(argmax_velocity(r, a, e));
      }
      const auto s1 = stats(amp), s2 = stats(vel);
      for (int c = 0; c < 3; ++c) {
        ae.at(a, e, c) = s1[c];
        ae.at(a, e, 3 + c) = s2[c];
      }
    }
  return {ra, ae};
}

inline dpft::RadarCube random_cube(std::mt19937_64& rng, int R, int A, int E, int D) {
  dpft::RadarCube cube;
  cube.power = Tensor({R, A, E, D});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : cube.power.values()) v = u(rng);
  auto axis = [](int n, double lo, double hi) {
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) out[i] = lo + (hi - lo) * (i + 0.5) / n;
    return out;
  };
  cube.range_axis = axis(R, 0.0, 72.0);
  cube.azimuth_axis = axis(A, -0.87, 0.87);
  cube.elevation_axis = axis(E, -0.26, 0.26);
  cube.doppler_axis = axis(D, -8.0, 8.0);
  return cube;
}

// Triangle-kernel form of bilinear sampling with zeros outside the plane;
// integer coordinates are pixel centres.
inline double sample(const Tensor& map, int channel, double x, double y) {
  const int H = map.dim(1), W = map.dim(2);
  double out = 0.0;
  for (int py = static_cast<int>(std::floor(y)); py <= static_cast<int>(std::floor(y)) + 1; ++py)
    for (int px = static_cast<int>(std::floor(x)); px <= static_cast<int>(std::floor(x)) + 1; ++px) {
      if (px < 0 || py < 0 || px >= W || py >= H) continue;
      const double w = std::max(0.0, 1.0 - std::abs(x - px)) * std::max(0.0, 1.0 - std::abs(y - py));
      out += w * map[(static_cast<std::size_t>(channel) * H + py) * W + px];
    }
  return out;
}

inline std::vector<double> dense(const Tensor& w, const Tensor& b, const std::vector<double>& x) {
  const int out = w.dim(0), in = w.dim(1);
  std::vector<double> y(out);
  for (int o = 0; o < out; ++o) {
    double s = b[o];
    for (int i = 0; i < in; ++i) s += w.at(o, i) * x[i];
    y[o] = s;
  }
  return y;
}

// Gather-and-weight deformable attention computed from raw parameter values:
// value projection, offsets, softmax weights, sampling, head concatenation,
// output projection, invalid rows zeroed.
inline Tensor deformable_attention(const dpft::DeformableAttention& attn, const dpft::nn::ParamStore& store,
                                   const Tensor& queries, const std::vector<Tensor>& pyramid,
                                   const dpft::ReferencePoints& refs) {
  const auto& cfg = attn.config();
  const int N = queries.dim(0), D = cfg.dim, H = cfg.heads, L = cfg.levels, K = cfg.points;
  const int dh = D / H;

  const Tensor& vw = store.value(attn.value_proj().weight);
  const Tensor& vb = store.value(attn.value_proj().bias);
  std::vector<Tensor> values;
  for (const Tensor& f : pyramid) {
    const int h = f.dim(1), w = f.dim(2);
    Tensor v({D, h, w});
    for (int o = 0; o < D; ++o)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double s = vb[o];
          for (int c = 0; c < f.dim(0); ++c) s += vw[static_cast<std::size_t>(o) * f.dim(0) + c] * f.at(c, y, x);
          v.at(o, y, x) = s;
        }
    values.push_back(std::move(v));
  }

  Tensor out({N, D});
  for (int n = 0; n < N; ++n) {
    if (!refs.valid[n]) continue;
    std::vector<double> q(queries.data() + static_cast<std::size_t>(n) * D, queries.data() + (n + 1) * D);
    const auto off = dense(store.value(attn.offset_net().weight), store.value(attn.offset_net().bias), q);
    const auto logit = dense(store.value(attn.weight_net().weight), store.value(attn.weight_net().bias), q);
    std::vector<double> sampled(D, 0.0);
    for (int h = 0; h < H; ++h) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < L * K; ++j) mx = std::max(mx, logit[h * L * K + j]);
      double z = 0.0;
      for (int j = 0; j < L * K; ++j) z += std::exp(logit[h * L * K + j] - mx);
      for (int l = 0; l < L; ++l)
        for (int k = 0; k < K; ++k) {
          const double a = std::exp(logit[h * L * K + l * K + k] - mx) / z;
          const int oi = ((h * L + l) * K + k) * 2;
          const double x = refs.normalized[n][0] * values[l].dim(2) - 0.5 + off[oi];
          const double y = refs.normalized[n][1] * values[l].dim(1) - 0.5 + off[oi + 1];
          for (int c = h * dh; c < (h + 1) * dh; ++c) sampled[c] += a * sample(values[l], c, x, y);
        }
    }
    const auto o = dense(store.value(attn.output_proj().weight), store.value(attn.output_proj().bias), sampled);
    for (int c = 0; c < D; ++c) out.at(n, c) = o[c];
  }
  return out;
}

// Minimum total cost over all injective assignments of columns to rows.
inline double brute_force_assignment(const Tensor& cost, std::vector<int>* best_rows = nullptr) {
  const int rows = cost.dim(0), cols = cost.dim(1);
  std::vector<int> perm(rows);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int j = 0; j < cols; ++j) s += cost.at(perm[j], j);
    if (s < best) {
      best = s;
      if (best_rows) best_rows->assign(perm.begin(), perm.begin() + cols);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline bool inside(const dpft::Box3D& b, double x, double y, double z, bool use_z) {
  const double dx = x - b.center[0], dy = y - b.center[1];
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  const double lx = c * dx + s * dy, ly = -s * dx + c * dy;
  if (std::abs(lx) > 0.5 * b.size[0] || std::abs(ly) > 0.5 * b.size[1]) return false;
  return !use_z || std::abs(z - b.center[2]) <= 0.5 * b.size[2];
}

// Uniform samples inside `a`; the hit fraction estimates |a ∩ b| / |a|.
inline double monte_carlo_iou(const dpft::Box3D& a, const dpft::Box3D& b, bool three_d, int samples,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const double c = std::cos(a.heading), s = std::sin(a.heading);
  long hits = 0;
  for (int i = 0; i < samples; ++i) {
    const double lx = u(rng) * a.size[0], ly = u(rng) * a.size[1], lz = u(rng) * a.size[2];
    const double x = a.center[0] + c * lx - s * ly;
    const double y = a.center[1] + s * lx + c * ly;
    if (inside(b, x, y, a.center[2] + lz, three_d)) ++hits;
  }
  const double va = three_d ? a.volume() : a.size[0] * a.size[1];
  const double vb = three_d ? b.volume() : b.size[0] * b.size[1];
  const double inter = va * static_cast<double>(hits) / samples;
  return inter / (va + vb - inter);
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t within = 0;  // entries with relative error <= tol
  double max_rel = 0.0;
  double fraction() const { return checked ? static_cast<double>(within) / checked : 1.0; }
};

// Central differences of `loss` over every parameter entry, compared with the
// analytic gradients. Relative error uses max(|a|, |n|) with a small floor so
// entries whose true gradient is ~0 are compared absolutely.
inline GradCheck finite_difference_check(dpft::nn::ParamStore& store, const std::vector<Tensor>& analytic,
                                         const std::function<double()>& loss, double step = 1e-5,
                                         double tol = 1e-3, double floor = 1e-6) {
  GradCheck out;
  for (int p = 0; p < store.count(); ++p) {
    Tensor& value = store.value(p);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + step;
      const double up = loss();
      value[i] = orig - step;
      const double down = loss();
      value[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++out.checked;
      if (rel <= tol) ++out.within;
      out.max_rel = std::max(out.max_rel, rel);
    }
  }
  return out;
}

}  // namespace oracle
