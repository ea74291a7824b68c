#pragma once

// Paired camera / radar-cube / ground-truth generator standing in for a real
// recorded dataset. Rendering is deliberately crude: projected silhouettes for
// the camera and Gaussian scatterer blobs for the radar.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpft/box.hpp"
#include "dpft/projection.hpp"

namespace dpft {

enum class Condition { normal, overcast, fog, rain, sleet, light_snow, heavy_snow };
enum class Daytime { day, night };

inline constexpr std::array<Condition, 7> kAllConditions{
    Condition::normal, Condition::overcast,   Condition::fog,       Condition::rain,
    Condition::sleet,  Condition::light_snow, Condition::heavy_snow};

std::string to_string(Condition c);
std::string to_string(Daytime d);
Condition parse_condition(const std::string& s);
Daytime parse_daytime(const std::string& s);

struct RadarSpec {
  double fov_azimuth = 50.0 * 3.14159265358979323846 / 180.0;    // half-angle, rad
  double fov_elevation = 15.0 * 3.14159265358979323846 / 180.0;  // half-angle, rad
  double range_max = 72.0;
  int range_bins = 64;
  int azimuth_bins = 32;
  int elevation_bins = 16;
  int doppler_bins = 8;
  double doppler_max = 8.0;  // m/s; axis covers [-max, max)

  std::vector<double> range_axis() const;
  std::vector<double> azimuth_axis() const;
  std::vector<double> elevation_axis() const;
  std::vector<double> doppler_axis() const;
};

struct SensorRig {
  int image_height = 128;
  int image_width = 256;
  CameraIntrinsics intrinsics;
  CameraExtrinsics extrinsics;
  double mount_height = 1.0;  // sensors above ground, m
  RadarSpec radar;

  // Forward-looking camera at the radar origin covering the radar azimuth FoV.
  static SensorRig make_default(int image_height = 128, int image_width = 256, const RadarSpec& radar = {});
  void validate() const;
};

struct ObjectClass {
  std::string name;
  std::array<double, 3> size_min;
  std::array<double, 3> size_max;
  std::array<double, 3> color;
  double radar_power = 1.0;
};

std::vector<ObjectClass> default_classes();

struct SceneObject {
  Box3D box;
  double radial_velocity = 0.0;
};

struct Scene {
  std::vector<SceneObject> objects;
  Condition condition = Condition::normal;
  Daytime daytime = Daytime::day;
  std::uint64_t seed = 0;

  std::vector<Box3D> boxes() const;
};

struct SceneConfig {
  int min_objects = 1;
  int max_objects = 4;
  double range_min = 6.0;
  double range_max = 62.0;
  double azimuth_margin = 0.15;  // rad kept clear of the FoV edge
  std::vector<ObjectClass> classes = default_classes();
  // Sampling weight per condition, indexed like kAllConditions.
  std::array<double, 7> condition_weights{1, 0, 0, 0, 0, 0, 0};
  double night_probability = 0.0;
  bool static_objects = false;
  double max_pair_iou = 0.1;
  int rejection_attempts = 200;
  // Radar background mean power relative to a unit scatterer peak; 0 disables noise.
  double radar_noise_floor = 0.01;
  bool weather_effects = true;
};

class SceneGenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Scene generate_scene(std::uint64_t seed, const SceneConfig& config, const SensorRig& rig);

struct WeatherEffect {
  double contrast_loss;  // blend factor towards mid-grey
  double pixel_noise;    // Gaussian sigma
  double radar_noise;    // noise-floor multiplier
};
WeatherEffect weather_effect(Condition c);
inline constexpr double kNightFactor = 0.35;

CameraFrame render_camera(const Scene& scene, const SensorRig& rig, const SceneConfig& config);
RadarCube render_radar(const Scene& scene, const SensorRig& rig, const SceneConfig& config);

// Ego cartesian <-> polar (range, azimuth, elevation).
std::array<double, 3> to_polar(const std::array<double, 3>& xyz);
std::array<double, 3> to_cartesian(const std::array<double, 3>& polar);

}  // namespace dpft
