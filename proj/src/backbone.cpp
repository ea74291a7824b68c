#include "dpft/backbone.hpp"

#include <stdexcept>

namespace dpft {

namespace {

int half_up(int n) { return (n + 1) / 2; }

}  // namespace

std::string to_string(SourceId s) {
  switch (s) {
    case SourceId::camera: return "camera";
    case SourceId::radar_ra: return "radar_ra";
    case SourceId::radar_ae: return "radar_ae";
  }
  return "unknown";
}

SourceId parse_source(const std::string& s) {
  if (s == "camera") return SourceId::camera;
  if (s == "radar_ra") return SourceId::radar_ra;
  if (s == "radar_ae") return SourceId::radar_ae;
  throw std::invalid_argument("unknown sensor source '" + s + "'");
}

EncoderConfig camera_encoder_config() {
  EncoderConfig c;
  c.in_channels = 3;
  c.stem_channels = 16;
  c.stage_channels = {16, 24, 32};
  c.blocks = {2, 2, 2};
  return c;
}

EncoderConfig radar_encoder_config() {
  EncoderConfig c;
  c.in_channels = ChannelAdapter::kOut;
  c.stem_channels = 16;
  c.stage_channels = {16, 24, 32};
  c.blocks = {1, 1, 1};
  return c;
}

ChannelAdapter::ChannelAdapter(nn::ParamStore& store, nn::Initializer& init, const std::string& name)
    : conv_(nn::Conv2d::create(store, init, name, kIn, kOut, 1, 1)) {}

ag::Var ChannelAdapter::operator()(nn::Context& ctx, const ag::Var& map) const {
  if (map.value().rank() != 3 || map.dim(0) != kIn) {
    throw ShapeError("channel adapter expects 6 input channels, got " + shape_str(map.shape()));
  }
  return conv_(ctx, map);
}

Encoder::Encoder(nn::ParamStore& store, nn::Initializer& init, const std::string& name,
                 const EncoderConfig& config)
    : config_(config) {
  stem_ = nn::Conv2d::create(store, init, name + ".stem", config.in_channels, config.stem_channels, 3, 2);
  int in = config.stem_channels;
  for (int s = 0; s < 3; ++s) {
    const std::string sname = name + ".stage" + std::to_string(s + 1);
    Stage stage;
    const int out = config.stage_channels[s];
    stage.down = nn::Conv2d::create(store, init, sname + ".down", in, out, 3, 2);
    for (int b = 0; b < config.blocks[s]; ++b) {
      const std::string bname = sname + ".block" + std::to_string(b + 1);
      Block blk{nn::Conv2d::create(store, init, bname + ".conv1", out, out, 3, 1),
                nn::Conv2d::create(store, init, bname + ".conv2", out, out, 3, 1)};
      // Residual branches start near identity.
      store.value(blk.conv2.weight).scale_(0.1);
      stage.blocks.push_back(blk);
    }
    stages_.push_back(std::move(stage));
    in = out;
  }
}

std::vector<ag::Var> Encoder::operator()(nn::Context& ctx, const ag::Var& input) const {
  if (input.value().rank() != 3 || input.dim(0) != config_.in_channels) {
    throw ShapeError("encoder expects [" + std::to_string(config_.in_channels) + ", H, W], got " +
                     shape_str(input.shape()));
  }
  if (input.dim(1) < kMinInput || input.dim(2) < kMinInput) {
    throw ShapeError("encoder input too small: " + shape_str(input.shape()) + " (minimum 8x8)");
  }
  std::vector<ag::Var> out;
  ag::Var x = ag::relu(stem_(ctx, input));
  for (const auto& stage : stages_) {
    x = ag::relu(stage.down(ctx, x));
    for (const auto& blk : stage.blocks) {
      ag::Var y = ag::relu(blk.conv1(ctx, x));
      y = blk.conv2(ctx, y);
      x = ag::relu(ag::add(x, y));
    }
    out.push_back(x);
  }
  return out;
}

FpnNeck::FpnNeck(nn::ParamStore& store, nn::Initializer& init, const std::string& name, int raw_channels,
                 const std::array<int, 3>& stage_channels, int out_channels, int raw_pool)
    : out_channels_(out_channels), raw_pool_(raw_pool) {
  laterals_[0] = nn::Conv2d::create(store, init, name + ".lateral_raw", raw_channels, out_channels, 1, 1);
  for (int s = 0; s < 3; ++s) {
    laterals_[s + 1] = nn::Conv2d::create(store, init, name + ".lateral_s" + std::to_string(4 << s),
                                          stage_channels[s], out_channels, 1, 1);
  }
}

FeaturePyramid FpnNeck::operator()(nn::Context& ctx, const std::vector<ag::Var>& stages, const ag::Var& raw,
                                   SourceId source) const {
  if (stages.size() != 3) throw ShapeError("fpn neck expects 3 stage maps");
  const ag::Var skip = ag::avg_pool2d(raw, raw_pool_);
  // Stage s must be the stride-2^(s+2) reduction of the raw input.
  int h = half_up(half_up(raw.dim(1))), w = half_up(half_up(raw.dim(2)));
  for (int s = 0; s < 3; ++s) {
    if (s > 0) {
      h = half_up(h);
      w = half_up(w);
    }
    if (stages[s].dim(1) != h || stages[s].dim(2) != w) {
      throw ShapeError("fpn neck: stage " + std::to_string(s) + " has shape " + shape_str(stages[s].shape()) +
                       ", expected spatial " + std::to_string(h) + "x" + std::to_string(w));
    }
  }

  FeaturePyramid pyr;
  pyr.channels = out_channels_;
  pyr.source = source;
  ag::Var top = laterals_[3](ctx, stages[2]);
  pyr.levels.push_back(top);
  for (int s = 1; s >= 0; --s) {
    const ag::Var lat = laterals_[s + 1](ctx, stages[s]);
    top = ag::add(lat, ag::upsample_nearest(top, lat.dim(1), lat.dim(2)));
    pyr.levels.push_back(top);
  }
  const ag::Var lat = laterals_[0](ctx, skip);
  pyr.levels.push_back(ag::add(lat, ag::upsample_nearest(top, lat.dim(1), lat.dim(2))));
  return pyr;
}

StreamBackbone::StreamBackbone(nn::ParamStore& store, nn::Initializer& init, SourceId source,
                               const EncoderConfig& encoder, int out_channels, int raw_pool)
    : source_(source), adapt_(source != SourceId::camera) {
  const std::string name = to_string(source);
  int raw_channels = encoder.in_channels;
  if (adapt_) {
    adapter_ = ChannelAdapter(store, init, name + ".adapter");
    raw_channels = ChannelAdapter::kIn;
  }
  encoder_ = Encoder(store, init, name + ".encoder", encoder);
  neck_ = FpnNeck(store, init, name + ".neck", raw_channels, encoder.stage_channels, out_channels, raw_pool);
}

FeaturePyramid StreamBackbone::operator()(nn::Context& ctx, const ag::Var& input) const {
  const ag::Var enc_in = adapt_ ? adapter_(ctx, input) : input;
  const auto stages = encoder_(ctx, enc_in);
  return neck_(ctx, stages, input, source_);
}

}  // namespace dpft
