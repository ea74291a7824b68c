#pragma once

#include <array>
#include <string>
#include <vector>

#include "dpft/nn.hpp"

namespace dpft {

enum class SourceId { camera, radar_ra, radar_ae };
std::string to_string(SourceId s);
SourceId parse_source(const std::string& s);

// Multi-scale maps of one input stream, coarse-to-fine, each [channels, H, W].
struct FeaturePyramid {
  std::vector<ag::Var> levels;
  int channels = 0;
  SourceId source = SourceId::camera;
};

// Residual convolutional encoder: stride-2 stem, then three stride-2 stages.
// Stages come out at strides 4, 8 and 16 of the input.
struct EncoderConfig {
  int in_channels = 3;
  int stem_channels = 16;
  std::array<int, 3> stage_channels{16, 24, 32};
  std::array<int, 3> blocks{1, 1, 1};
};

EncoderConfig camera_encoder_config();
EncoderConfig radar_encoder_config();

// Learned 1x1 convolution mapping the six radar statistics to the encoder's
// three input channels.
class ChannelAdapter {
 public:
  static constexpr int kIn = 6;
  static constexpr int kOut = 3;

  ChannelAdapter() = default;
  ChannelAdapter(nn::ParamStore& store, nn::Initializer& init, const std::string& name);

  ag::Var operator()(nn::Context& ctx, const ag::Var& map) const;
  const nn::Conv2d& conv() const { return conv_; }

 private:
  nn::Conv2d conv_;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(nn::ParamStore& store, nn::Initializer& init, const std::string& name, const EncoderConfig& config);

  // Returns the three stage maps, finest first.
  std::vector<ag::Var> operator()(nn::Context& ctx, const ag::Var& input) const;
  const EncoderConfig& config() const { return config_; }

  static constexpr int kMinInput = 8;

 private:
  struct Block {
    nn::Conv2d conv1;
    nn::Conv2d conv2;
  };
  struct Stage {
    nn::Conv2d down;
    std::vector<Block> blocks;
  };

  EncoderConfig config_;
  nn::Conv2d stem_;
  std::vector<Stage> stages_;
};

// Top-down feature pyramid over three encoder stages plus the raw input.
class FpnNeck {
 public:
  FpnNeck() = default;
  FpnNeck(nn::ParamStore& store, nn::Initializer& init, const std::string& name, int raw_channels,
          const std::array<int, 3>& stage_channels, int out_channels, int raw_pool = 1);

  // `stages` finest first (strides 4, 8, 16). Output levels coarse-to-fine:
  // {s16, s8, s4, raw}.
  FeaturePyramid operator()(nn::Context& ctx, const std::vector<ag::Var>& stages, const ag::Var& raw,
                            SourceId source) const;

  const std::array<nn::Conv2d, 4>& laterals() const { return laterals_; }

 private:
  std::array<nn::Conv2d, 4> laterals_;  // raw, s4, s8, s16
  int out_channels_ = 16;
  int raw_pool_ = 1;
};

// Adapter (radar only) + encoder + neck for one input stream.
class StreamBackbone {
 public:
  StreamBackbone() = default;
  StreamBackbone(nn::ParamStore& store, nn::Initializer& init, SourceId source, const EncoderConfig& encoder,
                 int out_channels, int raw_pool = 1);

  FeaturePyramid operator()(nn::Context& ctx, const ag::Var& input) const;
  SourceId source() const { return source_; }

 private:
  SourceId source_ = SourceId::camera;
  bool adapt_ = false;
  ChannelAdapter adapter_;
  Encoder encoder_;
  FpnNeck neck_;
};

}  // namespace dpft
