#pragma once

// Query-based fusion: polar query grid, per-sensor reference projection,
// multi-scale deformable cross-attention and max pooling across sensors.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "dpft/backbone.hpp"
#include "dpft/projection.hpp"

namespace dpft {

// Query reference points (range m, azimuth rad, elevation rad) and features.
struct QuerySet {
  Tensor positions;  // [N, 3]
  ag::Var features;  // [N, D]

  int size() const { return positions.dim(0); }
};

struct QueryGridConfig {
  int num_queries = 400;
  int dim = 16;
  double range_max = 72.0;
  double fov_azimuth = 50.0 * 3.14159265358979323846 / 180.0;
};

// Perfect-square grid over range x azimuth at elevation 0 (cell centres);
// features i.i.d. uniform on [0, 1).
QuerySet init_queries(const QueryGridConfig& config, std::uint64_t seed);
int query_grid_side(int num_queries);

// Location of a reference point on a sensor map. Camera results are continuous
// pixel coordinates (u right, v down); radar results are bin-index coordinates
// whose cell centres sit at integers.
struct ProjectionResult {
  double u = 0.0;
  double v = 0.0;
  bool valid = false;
};

ProjectionResult project_to_camera(const std::array<double, 3>& polar, const CameraIntrinsics& intrinsics,
                                   const CameraExtrinsics& extrinsics, int image_height, int image_width);

enum class RadarPlane { ra, ae };

// Axis bounds of the projected radar maps (outer bin edges).
struct RadarGrid {
  double range_min = 0.0;
  double range_max = 72.0;
  int range_bins = 58;
  double azimuth_min = -0.872664626;
  double azimuth_max = 0.872664626;
  int azimuth_bins = 32;
  double elevation_min = -0.261799388;
  double elevation_max = 0.261799388;
  int elevation_bins = 16;

  // Edges inferred from (uniform) bin-centre axes.
  static RadarGrid from_cube(const RadarCube& cube);
};

// RA: v = row over range, u = col over azimuth. AE: v = row over azimuth,
// u = col over elevation. Each axis maps [min, max] -> [-0.5, bins - 0.5].
ProjectionResult project_to_radar_plane(const std::array<double, 3>& polar, RadarPlane plane,
                                        const RadarGrid& grid);

// Reference points in normalised map coordinates (x along width, y along
// height, both in [0, 1]).
struct ReferencePoints {
  std::vector<std::array<double, 2>> normalized;
  std::vector<std::uint8_t> valid;
};

ReferencePoints camera_references(const Tensor& positions, const CameraIntrinsics& intrinsics,
                                  const CameraExtrinsics& extrinsics, int image_height, int image_width);
ReferencePoints radar_references(const Tensor& positions, RadarPlane plane, const RadarGrid& grid);

// Fixed 2D sinusoidal encoding: channels [0, D/2) encode the normalised row,
// [D/2, D) the normalised column, as sin/cos pairs with frequencies 2^i cycles
// per map extent.
Tensor positional_encoding(int channels, int height, int width);
FeaturePyramid positional_encode(const FeaturePyramid& pyramid);

struct DeformAttnConfig {
  int dim = 16;
  int heads = 4;
  int levels = 4;
  int points = 4;
};

class DeformableAttention {
 public:
  DeformableAttention() = default;
  DeformableAttention(nn::ParamStore& store, nn::Initializer& init, const std::string& name,
                      const DeformAttnConfig& config);

  // 1x1 value projection of every pyramid level; computed once per frame.
  std::vector<ag::Var> project_values(nn::Context& ctx, const FeaturePyramid& pyramid) const;

  // Sampling offsets are in level pixels, added to the reference scaled onto
  // each level. Invalid queries return a zero row.
  ag::Var operator()(nn::Context& ctx, const ag::Var& queries, const std::vector<ag::Var>& values,
                     const ReferencePoints& refs) const;

  // Softmax-normalised attention weights [N, heads, levels*points].
  ag::Var attention_weights(nn::Context& ctx, const ag::Var& queries) const;
  // Absolute sampling locations [N, heads, levels, points, 2].
  ag::Var sampling_locations(nn::Context& ctx, const ag::Var& queries, const std::vector<ag::Var>& values,
                             const ReferencePoints& refs) const;

  const DeformAttnConfig& config() const { return config_; }
  const nn::Linear& offset_net() const { return offsets_; }
  const nn::Linear& weight_net() const { return weights_; }
  const nn::Conv2d& value_proj() const { return value_proj_; }
  const nn::Linear& output_proj() const { return output_; }

 private:
  DeformAttnConfig config_;
  nn::Linear offsets_;
  nn::Linear weights_;
  nn::Conv2d value_proj_;
  nn::Linear output_;
};

class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(nn::ParamStore& store, nn::Initializer& init, const std::string& name, int dim,
                         int heads);

  // Queries/keys come from x + pos, values from x.
  ag::Var operator()(nn::Context& ctx, const ag::Var& x, const Tensor& pos) const;

 private:
  int dim_ = 16;
  int heads_ = 4;
  nn::Linear q_, k_, v_, o_;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(nn::ParamStore& store, nn::Initializer& init, const std::string& name, int dim, int hidden);
  ag::Var operator()(nn::Context& ctx, const ag::Var& x) const;

 private:
  nn::Linear fc1_, fc2_;
};

// Sinusoidal embedding of the query polar positions for self-attention.
Tensor query_position_embedding(const Tensor& positions, int dim, double range_max, double fov_azimuth);

struct SensorInput {
  SourceId source = SourceId::camera;
  std::vector<ag::Var> values;  // value-projected pyramid levels, coarse-to-fine
  ReferencePoints refs;
};

struct FusionConfig {
  int dim = 16;
  int heads = 4;
  int points = 4;
  int levels = 4;
  int ffn_hidden = 64;
  double dropout = 0.1;
  double range_max = 72.0;
  double fov_azimuth = 50.0 * 3.14159265358979323846 / 180.0;
  std::vector<SourceId> sensors{SourceId::camera, SourceId::radar_ra, SourceId::radar_ae};
};

class FusionBlock {
 public:
  FusionBlock() = default;
  FusionBlock(nn::ParamStore& store, nn::Initializer& init, const FusionConfig& config);

  // Self-attention, per-sensor deformable cross-attention and FFN (each with
  // dropout + residual + layer norm), then masked max over sensors. Rows with
  // no valid sensor keep the self-attended features.
  ag::Var operator()(nn::Context& ctx, const ag::Var& features, const Tensor& positions,
                     const std::vector<SensorInput>& sensors) const;

  // Step 1 alone (exposed for composition tests).
  ag::Var self_attend(nn::Context& ctx, const ag::Var& features, const Tensor& positions) const;
  // Steps 3-4 for sensor `index` alone.
  ag::Var sensor_branch(nn::Context& ctx, std::size_t index, const ag::Var& features,
                        const SensorInput& sensor) const;

  const FusionConfig& config() const { return config_; }
  const DeformableAttention& cross(std::size_t i) const { return branches_.at(i).cross; }
  std::size_t sensor_index(SourceId id) const;

 private:
  struct Branch {
    DeformableAttention cross;
    nn::LayerNorm norm_cross;
    FeedForward ffn;
    nn::LayerNorm norm_ffn;
  };

  FusionConfig config_;
  MultiHeadSelfAttention self_attn_;
  nn::LayerNorm norm_self_;
  std::vector<Branch> branches_;
};

}  // namespace dpft
