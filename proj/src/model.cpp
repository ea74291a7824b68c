#include "dpft/model.hpp"

#include <algorithm>
#include <cmath>

#include "dpft/seed.hpp"

namespace dpft {

Tensor to_channels_first(const Tensor& hwc) {
  const int h = hwc.dim(0), w = hwc.dim(1), c = hwc.dim(2);
  Tensor out({c, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < c; ++k) out.at(k, i, j) = hwc.at(i, j, k);
  return out;
}

ModelInput prepare_input(const Sample& sample, const PrepConfig& config) {
  ModelInput in;
  const RadarCube trimmed = trim_artifacts(sample.cube, config.trim_margin, config.trim_axis);
  const DualProjection proj = project_cube(trimmed, {config.log_amplitude});
  in.ra = to_channels_first(proj.ra);
  in.ae = to_channels_first(proj.ae);
  in.grid = RadarGrid::from_cube(trimmed);

  double vmax = 0.0;
  for (double v : trimmed.doppler_axis) vmax = std::max(vmax, std::abs(v));
  if (vmax > 0.0) {
    for (Tensor* map : {&in.ra, &in.ae}) {
      const std::size_t plane = static_cast<std::size_t>(map->dim(1)) * map->dim(2);
      for (int ch : {kDopMax, kDopMedian, kDopVar}) {
        const double s = ch == kDopVar ? 1.0 / (vmax * vmax) : 1.0 / vmax;
        double* p = map->data() + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] *= s;
      }
    }
  }

  const CameraFrame frame = resize_image(sample.camera, config.image_height);
  in.camera = to_channels_first(frame.pixels);
  in.intrinsics = frame.intrinsics;
  in.extrinsics = frame.extrinsics;
  return in;
}

bool ModelConfig::uses(SourceId s) const { return std::find(sensors.begin(), sensors.end(), s) != sensors.end(); }

DpftModel::DpftModel(const ModelConfig& config) : config_(config) {
  if (config.sensors.empty()) throw std::invalid_argument("model needs at least one sensor");
  nn::Initializer init(derive_seed(config.seed, SeedStream::init));
  for (SourceId s : config.sensors) {
    const EncoderConfig& enc = s == SourceId::camera ? config.camera_encoder : config.radar_encoder;
    streams_.emplace_back(params_, init, s, enc, config.dim, config.raw_pool);
  }
  FusionConfig fc;
  fc.dim = config.dim;
  fc.heads = config.heads;
  fc.points = config.points;
  fc.levels = 4;
  fc.ffn_hidden = config.ffn_hidden;
  fc.dropout = config.dropout;
  fc.range_max = config.fov.range_max;
  fc.fov_azimuth = config.fov.fov_azimuth;
  fc.sensors = config.sensors;
  fusion_ = FusionBlock(params_, init, fc);
  head_ = DetectionHead(params_, init, config.dim, config.num_classes);

  QueryGridConfig qc;
  qc.num_queries = config.num_queries;
  qc.dim = config.dim;
  qc.range_max = config.fov.range_max;
  qc.fov_azimuth = config.fov.fov_azimuth;
  queries_ = init_queries(qc, derive_seed(config.seed, SeedStream::queries));
}

std::vector<SensorInput> DpftModel::encode_sensors(nn::Context& ctx, const ModelInput& input) const {
  std::vector<SensorInput> out;
  for (std::size_t i = 0; i < streams_.size(); ++i) {
    const SourceId s = config_.sensors[i];
    const Tensor& raw = s == SourceId::camera ? input.camera : (s == SourceId::radar_ra ? input.ra : input.ae);
    const FeaturePyramid pyr = positional_encode(streams_[i](ctx, ag::constant(raw)));
    SensorInput si;
    si.source = s;
    si.values = fusion_.cross(fusion_.sensor_index(s)).project_values(ctx, pyr);
    out.push_back(std::move(si));
  }
  return out;
}

void DpftModel::update_references(std::vector<SensorInput>& sensors, const Tensor& positions,
                                  const ModelInput& input) const {
  for (auto& s : sensors) {
    switch (s.source) {
      case SourceId::camera:
        s.refs = camera_references(positions, input.intrinsics, input.extrinsics, input.camera.dim(1),
                                   input.camera.dim(2));
        break;
      case SourceId::radar_ra: s.refs = radar_references(positions, RadarPlane::ra, input.grid); break;
      case SourceId::radar_ae: s.refs = radar_references(positions, RadarPlane::ae, input.grid); break;
    }
  }
}

std::vector<CycleOutput> DpftModel::iterative_refine(nn::Context& ctx, const QuerySet& queries,
                                                     std::vector<SensorInput>& sensors, const ModelInput& input,
                                                     int cycles) const {
  if (cycles < 0) throw std::invalid_argument("cycles must be >= 0");
  std::vector<CycleOutput> outputs;
  ag::Var features = queries.features;
  Tensor positions = queries.positions;
  for (int c = 0; c <= cycles; ++c) {
    update_references(sensors, positions, input);
    features = fusion_(ctx, features, positions, sensors);
    ag::Var raw = head_(ctx, features);
    outputs.push_back({raw, positions});
    if (c < cycles) {
      positions = positions_from_boxes(decode_boxes(raw.value(), positions, config_.num_classes), config_.fov);
    }
  }
  return outputs;
}

std::vector<CycleOutput> DpftModel::forward(nn::Context& ctx, const ModelInput& input) const {
  auto sensors = encode_sensors(ctx, input);
  return iterative_refine(ctx, queries_, sensors, input, config_.cycles);
}

DetectionSet DpftModel::detect(const ModelInput& input) const {
  nn::Context ctx(params_, false, 0, false);
  const auto outputs = forward(ctx, input);
  const auto& last = outputs.back();
  return decode_boxes(last.raw.value(), last.positions, config_.num_classes);
}

}  // namespace dpft
