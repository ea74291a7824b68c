#include "dpft/fusion.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace dpft {

namespace {

// sin/cos pairs of `value` (normalised to [0, 1]) at frequencies 2^i.
void sinusoid(double value, int pairs, double* out) {
  for (int i = 0; i < pairs; ++i) {
    const double phase = 2.0 * std::numbers::pi * std::ldexp(1.0, i) * value;
    out[2 * i] = std::sin(phase);
    out[2 * i + 1] = std::cos(phase);
  }
}

double linear_bin(double x, double lo, double hi, int bins) { return (x - lo) / (hi - lo) * bins - 0.5; }

bool within_bins(double c, int bins) { return c >= -0.5 - 1e-9 && c <= bins - 0.5 + 1e-9; }

}  // namespace

int query_grid_side(int num_queries) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(num_queries))));
  if (num_queries <= 0 || side * side != num_queries) {
    throw std::invalid_argument("query count must be a perfect square grid, got " + std::to_string(num_queries));
  }
  return side;
}

QuerySet init_queries(const QueryGridConfig& config, std::uint64_t seed) {
  const int side = query_grid_side(config.num_queries);
  const int n = config.num_queries;
  QuerySet qs;
  qs.positions = Tensor({n, 3});
  for (int i = 0; i < side; ++i) {
    for (int j = 0; j < side; ++j) {
      const int q = i * side + j;
      qs.positions.at(q, 0) = (i + 0.5) * config.range_max / side;
      qs.positions.at(q, 1) = -config.fov_azimuth + (j + 0.5) * 2.0 * config.fov_azimuth / side;
      qs.positions.at(q, 2) = 0.0;
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Tensor feats({n, config.dim});
  for (double& v : feats.values()) v = u01(rng);
  qs.features = ag::constant(std::move(feats));
  return qs;
}

ProjectionResult project_to_camera(const std::array<double, 3>& polar, const CameraIntrinsics& k,
                                   const CameraExtrinsics& extrinsics, int image_height, int image_width) {
  const double r = polar[0], az = polar[1], el = polar[2];
  const std::array<double, 3> ego{r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az), r * std::sin(el)};
  const auto cam = extrinsics.apply(ego);
  ProjectionResult out;
  if (cam[2] <= 1e-6) return out;
  out.u = k.fx * cam[0] / cam[2] + k.cx;
  out.v = k.fy * cam[1] / cam[2] + k.cy;
  out.valid = out.u >= 0.0 && out.u < image_width && out.v >= 0.0 && out.v < image_height;
  return out;
}

RadarGrid RadarGrid::from_cube(const RadarCube& cube) {
  auto edges = [](const std::vector<double>& axis, double& lo, double& hi) {
    if (axis.empty()) throw InvalidInput("empty radar axis");
    const double step = axis.size() > 1 ? (axis.back() - axis.front()) / (axis.size() - 1) : 1.0;
    lo = axis.front() - 0.5 * step;
    hi = axis.back() + 0.5 * step;
  };
  RadarGrid g;
  edges(cube.range_axis, g.range_min, g.range_max);
  edges(cube.azimuth_axis, g.azimuth_min, g.azimuth_max);
  edges(cube.elevation_axis, g.elevation_min, g.elevation_max);
  g.range_bins = cube.range_bins();
  g.azimuth_bins = cube.azimuth_bins();
  g.elevation_bins = cube.elevation_bins();
  return g;
}

ProjectionResult project_to_radar_plane(const std::array<double, 3>& polar, RadarPlane plane, const RadarGrid& g) {
  ProjectionResult out;
  if (plane == RadarPlane::ra) {
    out.v = linear_bin(polar[0], g.range_min, g.range_max, g.range_bins);
    out.u = linear_bin(polar[1], g.azimuth_min, g.azimuth_max, g.azimuth_bins);
    out.valid = within_bins(out.v, g.range_bins) && within_bins(out.u, g.azimuth_bins);
  } else {
    out.v = linear_bin(polar[1], g.azimuth_min, g.azimuth_max, g.azimuth_bins);
    out.u = linear_bin(polar[2], g.elevation_min, g.elevation_max, g.elevation_bins);
    out.valid = within_bins(out.v, g.azimuth_bins) && within_bins(out.u, g.elevation_bins);
  }
  return out;
}

ReferencePoints camera_references(const Tensor& positions, const CameraIntrinsics& intrinsics,
                                  const CameraExtrinsics& extrinsics, int image_height, int image_width) {
  const int n = positions.dim(0);
  ReferencePoints refs;
  refs.normalized.resize(n);
  refs.valid.resize(n);
  for (int q = 0; q < n; ++q) {
    const auto p = project_to_camera({positions.at(q, 0), positions.at(q, 1), positions.at(q, 2)}, intrinsics,
                                     extrinsics, image_height, image_width);
    refs.normalized[q] = {p.u / image_width, p.v / image_height};
    refs.valid[q] = p.valid;
  }
  return refs;
}

ReferencePoints radar_references(const Tensor& positions, RadarPlane plane, const RadarGrid& grid) {
  const int n = positions.dim(0);
  const int rows = plane == RadarPlane::ra ? grid.range_bins : grid.azimuth_bins;
  const int cols = plane == RadarPlane::ra ? grid.azimuth_bins : grid.elevation_bins;
  ReferencePoints refs;
  refs.normalized.resize(n);
  refs.valid.resize(n);
  for (int q = 0; q < n; ++q) {
    const auto p = project_to_radar_plane({positions.at(q, 0), positions.at(q, 1), positions.at(q, 2)}, plane, grid);
    refs.normalized[q] = {(p.u + 0.5) / cols, (p.v + 0.5) / rows};
    refs.valid[q] = p.valid;
  }
  return refs;
}

Tensor positional_encoding(int channels, int height, int width) {
  if (channels % 4 != 0) throw ShapeError("positional encoding needs channels divisible by 4");
  const int half = channels / 2;
  Tensor pe({channels, height, width});
  std::vector<double> row_code(half), col_code(half);
  for (int i = 0; i < height; ++i) {
    sinusoid((i + 0.5) / height, half / 2, row_code.data());
    for (int j = 0; j < width; ++j) {
      sinusoid((j + 0.5) / width, half / 2, col_code.data());
      for (int c = 0; c < half; ++c) {
        pe.at(c, i, j) = row_code[c];
        pe.at(half + c, i, j) = col_code[c];
      }
    }
  }
  return pe;
}

FeaturePyramid positional_encode(const FeaturePyramid& pyramid) {
  FeaturePyramid out = pyramid;
  for (auto& level : out.levels) {
    level = ag::add_constant(level, positional_encoding(level.dim(0), level.dim(1), level.dim(2)));
  }
  return out;
}

Tensor query_position_embedding(const Tensor& positions, int dim, double range_max, double fov_azimuth) {
  if (dim % 4 != 0) throw ShapeError("query embedding needs dim divisible by 4");
  const int n = positions.dim(0);
  const int half = dim / 2;
  Tensor out({n, dim});
  for (int q = 0; q < n; ++q) {
    sinusoid(positions.at(q, 0) / range_max, half / 2, &out.at(q, 0));
    sinusoid((positions.at(q, 1) + fov_azimuth) / (2.0 * fov_azimuth), half / 2, &out.at(q, half));
  }
  return out;
}

// ---------------------------------------------------------------------------

DeformableAttention::DeformableAttention(nn::ParamStore& store, nn::Initializer& init, const std::string& name,
                                         const DeformAttnConfig& config)
    : config_(config) {
  if (config.dim % config.heads != 0) throw std::invalid_argument("attention dim must be divisible by heads");
  const int hlk = config.heads * config.levels * config.points;
  offsets_ = nn::Linear::create(store, init, name + ".offsets", config.dim, hlk * 2);
  weights_ = nn::Linear::create(store, init, name + ".weights", config.dim, hlk);
  value_proj_ = nn::Conv2d::create(store, init, name + ".value", config.dim, config.dim, 1, 1);
  output_ = nn::Linear::create(store, init, name + ".output", config.dim, config.dim);

  // Zero weights; bias spreads each head's points along its own direction.
  store.value(offsets_.weight).fill(0.0);
  store.value(weights_.weight).fill(0.0);
  Tensor& bias = store.value(offsets_.bias);
  for (int h = 0; h < config.heads; ++h) {
    const double theta = 2.0 * std::numbers::pi * h / config.heads;
    for (int l = 0; l < config.levels; ++l)
      for (int k = 0; k < config.points; ++k) {
        const std::size_t i = ((static_cast<std::size_t>(h) * config.levels + l) * config.points + k) * 2;
        bias[i] = (k + 1) * std::cos(theta);
        bias[i + 1] = (k + 1) * std::sin(theta);
      }
  }
}

std::vector<ag::Var> DeformableAttention::project_values(nn::Context& ctx, const FeaturePyramid& pyramid) const {
  if (static_cast<int>(pyramid.levels.size()) != config_.levels) {
    throw ShapeError("deformable attention expects " + std::to_string(config_.levels) + " levels, got " +
                     std::to_string(pyramid.levels.size()));
  }
  std::vector<ag::Var> out;
  out.reserve(pyramid.levels.size());
  for (const auto& level : pyramid.levels) out.push_back(value_proj_(ctx, level));
  return out;
}

ag::Var DeformableAttention::attention_weights(nn::Context& ctx, const ag::Var& queries) const {
  const int n = queries.dim(0);
  return ag::softmax_last(
      ag::reshape(weights_(ctx, queries), {n, config_.heads, config_.levels * config_.points}));
}

ag::Var DeformableAttention::sampling_locations(nn::Context& ctx, const ag::Var& queries,
                                                const std::vector<ag::Var>& values,
                                                const ReferencePoints& refs) const {
  const int n = queries.dim(0);
  const int heads = config_.heads, levels = config_.levels, points = config_.points;
  if (static_cast<int>(values.size()) != levels) throw ShapeError("deformable attention: level count mismatch");
  if (refs.normalized.size() != static_cast<std::size_t>(n)) throw ShapeError("deformable attention: ref count mismatch");
  Tensor base({n, heads, levels, points, 2});
  for (int q = 0; q < n; ++q)
    for (int h = 0; h < heads; ++h)
      for (int l = 0; l < levels; ++l) {
        const double x = refs.normalized[q][0] * values[l].dim(2) - 0.5;
        const double y = refs.normalized[q][1] * values[l].dim(1) - 0.5;
        for (int k = 0; k < points; ++k) {
          const std::size_t i = ((((static_cast<std::size_t>(q) * heads + h) * levels + l) * points + k) * 2);
          base[i] = x;
          base[i + 1] = y;
        }
      }
  const ag::Var off = ag::reshape(offsets_(ctx, queries), {n, heads, levels, points, 2});
  return ag::add_constant(off, base);
}

ag::Var DeformableAttention::operator()(nn::Context& ctx, const ag::Var& queries, const std::vector<ag::Var>& values,
                                        const ReferencePoints& refs) const {
  if (queries.value().rank() != 2 || queries.dim(1) != config_.dim)
    throw ShapeError("deformable attention: queries must be [N, " + std::to_string(config_.dim) + "]");
  const int n = queries.dim(0);
  const ag::Var loc = sampling_locations(ctx, queries, values, refs);
  const ag::Var w = attention_weights(ctx, queries);
  const ag::Var sampled = ag::deform_attn_core(values, loc, w, refs.valid);
  const ag::Var projected = output_(ctx, sampled);
  Tensor mask({n, config_.dim});
  for (int q = 0; q < n; ++q)
    if (refs.valid[q])
      for (int c = 0; c < config_.dim; ++c) mask.at(q, c) = 1.0;
  return ag::mul(projected, ag::constant(std::move(mask)));
}

MultiHeadSelfAttention::MultiHeadSelfAttention(nn::ParamStore& store, nn::Initializer& init, const std::string& name,
                                               int dim, int heads)
    : dim_(dim), heads_(heads) {
  if (dim % heads != 0) throw std::invalid_argument("self-attention dim must be divisible by heads");
  q_ = nn::Linear::create(store, init, name + ".q", dim, dim);
  k_ = nn::Linear::create(store, init, name + ".k", dim, dim);
  v_ = nn::Linear::create(store, init, name + ".v", dim, dim);
  o_ = nn::Linear::create(store, init, name + ".o", dim, dim);
}

ag::Var MultiHeadSelfAttention::operator()(nn::Context& ctx, const ag::Var& x, const Tensor& pos) const {
  const ag::Var qk_in = ag::add_constant(x, pos);
  const ag::Var q = q_(ctx, qk_in);
  const ag::Var k = k_(ctx, qk_in);
  const ag::Var v = v_(ctx, x);
  const int dh = dim_ / heads_;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ag::Var> heads;
  for (int h = 0; h < heads_; ++h) {
    const ag::Var qh = ag::slice_cols(q, h * dh, dh);
    const ag::Var kh = ag::slice_cols(k, h * dh, dh);
    const ag::Var vh = ag::slice_cols(v, h * dh, dh);
    const ag::Var attn = ag::softmax_last(ag::scale(ag::matmul_nt(qh, kh), inv));
    heads.push_back(ag::matmul(attn, vh));
  }
  return o_(ctx, ag::concat_cols(heads));
}

FeedForward::FeedForward(nn::ParamStore& store, nn::Initializer& init, const std::string& name, int dim, int hidden)
    : fc1_(nn::Linear::create(store, init, name + ".fc1", dim, hidden)),
      fc2_(nn::Linear::create(store, init, name + ".fc2", hidden, dim)) {}

ag::Var FeedForward::operator()(nn::Context& ctx, const ag::Var& x) const {
  return fc2_(ctx, ag::relu(fc1_(ctx, x)));
}

// ---------------------------------------------------------------------------

FusionBlock::FusionBlock(nn::ParamStore& store, nn::Initializer& init, const FusionConfig& config) : config_(config) {
  if (config.sensors.empty()) throw std::invalid_argument("fusion needs at least one sensor");
  self_attn_ = MultiHeadSelfAttention(store, init, "fusion.self_attn", config.dim, config.heads);
  norm_self_ = nn::LayerNorm::create(store, "fusion.self_attn.norm", config.dim);
  const DeformAttnConfig dcfg{config.dim, config.heads, config.levels, config.points};
  for (SourceId s : config.sensors) {
    const std::string name = "fusion." + to_string(s);
    branches_.push_back(Branch{DeformableAttention(store, init, name + ".cross", dcfg),
                               nn::LayerNorm::create(store, name + ".cross.norm", config.dim),
                               FeedForward(store, init, name + ".ffn", config.dim, config.ffn_hidden),
                               nn::LayerNorm::create(store, name + ".ffn.norm", config.dim)});
  }
}

std::size_t FusionBlock::sensor_index(SourceId id) const {
  for (std::size_t i = 0; i < config_.sensors.size(); ++i)
    if (config_.sensors[i] == id) return i;
  throw std::invalid_argument("sensor not part of this fusion block: " + to_string(id));
}

ag::Var FusionBlock::self_attend(nn::Context& ctx, const ag::Var& features, const Tensor& positions) const {
  const Tensor pos = query_position_embedding(positions, config_.dim, config_.range_max, config_.fov_azimuth);
  const ag::Var sa = self_attn_(ctx, features, pos);
  return norm_self_(ctx, ag::add(features, ag::dropout(sa, config_.dropout, ctx.training(), ctx.rng())));
}

ag::Var FusionBlock::sensor_branch(nn::Context& ctx, std::size_t index, const ag::Var& x,
                                   const SensorInput& sensor) const {
  const Branch& b = branches_.at(index);
  const ag::Var ca = b.cross(ctx, x, sensor.values, sensor.refs);
  const ag::Var y = b.norm_cross(ctx, ag::add(x, ag::dropout(ca, config_.dropout, ctx.training(), ctx.rng())));
  const ag::Var f = b.ffn(ctx, y);
  return b.norm_ffn(ctx, ag::add(y, ag::dropout(f, config_.dropout, ctx.training(), ctx.rng())));
}

ag::Var FusionBlock::operator()(nn::Context& ctx, const ag::Var& features, const Tensor& positions,
                                const std::vector<SensorInput>& sensors) const {
  if (sensors.size() != config_.sensors.size())
    throw std::invalid_argument("fusion block expects one input per configured sensor");
  const ag::Var x = self_attend(ctx, features, positions);
  std::vector<ag::Var> outs;
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& s : sensors) {
    outs.push_back(sensor_branch(ctx, sensor_index(s.source), x, s));
    masks.push_back(s.refs.valid);
  }
  return ag::masked_max(outs, masks, x);
}

}  // namespace dpft
