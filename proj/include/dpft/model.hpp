#pragma once

// End-to-end camera + dual-radar-perspective detector.

#include <cstdint>
#include <vector>

#include "dpft/backbone.hpp"
#include "dpft/dataset.hpp"
#include "dpft/detection.hpp"
#include "dpft/fusion.hpp"

namespace dpft {

struct PrepConfig {
  int trim_margin = 3;
  CubeAxis trim_axis = CubeAxis::range;
  bool log_amplitude = false;
  int image_height = 512;
};

// Network-ready tensors for one frame (channels first).
struct ModelInput {
  Tensor camera;  // [3, H, W]
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics;
  Tensor ra;  // [6, range, azimuth]
  Tensor ae;  // [6, azimuth, elevation]
  RadarGrid grid;
};

// Trim + project the cube, resize the image. Doppler channels are divided by
// the doppler axis extent (variance by its square) so all six channels are O(1).
ModelInput prepare_input(const Sample& sample, const PrepConfig& config);
Tensor to_channels_first(const Tensor& hwc);

struct ModelConfig {
  std::vector<SourceId> sensors{SourceId::camera, SourceId::radar_ra, SourceId::radar_ae};
  int dim = 16;
  int num_queries = 400;
  int heads = 4;
  int points = 4;
  int ffn_hidden = 64;
  double dropout = 0.1;
  int cycles = 3;
  int num_classes = 2;
  int raw_pool = 1;
  EncoderConfig camera_encoder = camera_encoder_config();
  EncoderConfig radar_encoder = radar_encoder_config();
  FieldOfView fov;
  std::uint64_t seed = 0;

  bool uses(SourceId s) const;
};

// Head output of one fusion pass together with the query positions it was
// decoded against.
struct CycleOutput {
  ag::Var raw;
  Tensor positions;
};

class DpftModel {
 public:
  explicit DpftModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const QuerySet& initial_queries() const { return queries_; }
  const FusionBlock& fusion() const { return fusion_; }
  const DetectionHead& head() const { return head_; }

  // Backbone, positional encoding and value projection for every enabled sensor.
  std::vector<SensorInput> encode_sensors(nn::Context& ctx, const ModelInput& input) const;
  // Per-sensor reference points for the given query positions.
  void update_references(std::vector<SensorInput>& sensors, const Tensor& positions, const ModelInput& input) const;

  // One initial pass plus `cycles` refinement passes; each entry is a full
  // head output (the last one is the prediction).
  std::vector<CycleOutput> iterative_refine(nn::Context& ctx, const QuerySet& queries,
                                            std::vector<SensorInput>& sensors, const ModelInput& input,
                                            int cycles) const;

  std::vector<CycleOutput> forward(nn::Context& ctx, const ModelInput& input) const;

  // Evaluation-mode inference; returns decoded boxes of the final pass.
  DetectionSet detect(const ModelInput& input) const;

 private:
  ModelConfig config_;
  nn::ParamStore params_;
  std::vector<StreamBackbone> streams_;
  FusionBlock fusion_;
  DetectionHead head_;
  QuerySet queries_;
};

}  // namespace dpft
