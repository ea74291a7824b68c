#include "dpft/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "dpft/iou.hpp"
#include "dpft/seed.hpp"

namespace dpft {

namespace {

constexpr std::array<const char*, 7> kConditionNames{"normal", "overcast",   "fog",       "rain",
                                                     "sleet",  "light_snow", "heavy_snow"};

std::vector<double> centred_axis(int bins, double lo, double hi) {
  std::vector<double> axis(bins);
  const double step = (hi - lo) / bins;
  for (int i = 0; i < bins; ++i) axis[i] = lo + (i + 0.5) * step;
  return axis;
}

double cross2(const Point2& o, const Point2& a, const Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

// Andrew's monotone chain; returns CCW hull.
std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

bool inside_convex(const std::vector<Point2>& hull, const Point2& p) {
  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (cross2(hull[i], hull[(i + 1) % hull.size()], p) < 0) return false;
  }
  return true;
}

}  // namespace

std::string to_string(Condition c) { return kConditionNames[static_cast<std::size_t>(c)]; }
std::string to_string(Daytime d) { return d == Daytime::day ? "day" : "night"; }

Condition parse_condition(const std::string& s) {
  for (std::size_t i = 0; i < kConditionNames.size(); ++i)
    if (s == kConditionNames[i]) return kAllConditions[i];
  throw std::invalid_argument("unknown condition tag: " + s);
}

Daytime parse_daytime(const std::string& s) {
  if (s == "day") return Daytime::day;
  if (s == "night") return Daytime::night;
  throw std::invalid_argument("unknown daytime tag: " + s);
}

std::vector<double> RadarSpec::range_axis() const { return centred_axis(range_bins, 0.0, range_max); }
std::vector<double> RadarSpec::azimuth_axis() const {
  return centred_axis(azimuth_bins, -fov_azimuth, fov_azimuth);
}
std::vector<double> RadarSpec::elevation_axis() const {
  return centred_axis(elevation_bins, -fov_elevation, fov_elevation);
}
std::vector<double> RadarSpec::doppler_axis() const {
  // FFT-style bins: index bins/2 is exactly zero velocity.
  std::vector<double> axis(doppler_bins);
  const double step = 2.0 * doppler_max / doppler_bins;
  for (int i = 0; i < doppler_bins; ++i) axis[i] = (i - doppler_bins / 2) * step;
  return axis;
}

SensorRig SensorRig::make_default(int image_height, int image_width, const RadarSpec& radar) {
  SensorRig rig;
  rig.image_height = image_height;
  rig.image_width = image_width;
  rig.radar = radar;
  const double f = 0.5 * rig.image_width / std::tan(rig.radar.fov_azimuth);
  rig.intrinsics = {f, f, 0.5 * rig.image_width, 0.5 * rig.image_height};
  // camera x right, y down, z forward
  rig.extrinsics.rotation = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  rig.extrinsics.translation = {0, 0, 0};
  return rig;
}

void SensorRig::validate() const {
  CameraFrame probe{Tensor({image_height, image_width, 3}), intrinsics, extrinsics};
  probe.validate();
  if (!(radar.range_max > 0)) throw InvalidInput("range_max must be > 0");
  if (!(radar.fov_azimuth > 0) || !(radar.fov_elevation > 0))
    throw InvalidInput("radar fov half-angles must be > 0");
  if (radar.range_bins < 1 || radar.azimuth_bins < 1 || radar.elevation_bins < 1 ||
      radar.doppler_bins < 1)
    throw InvalidInput("radar bin counts must be positive");
}

std::vector<ObjectClass> default_classes() {
  return {
      {"sedan", {3.8, 1.7, 1.4}, {4.8, 2.0, 1.7}, {0.85, 0.15, 0.1}, 1.0},
      {"bus_or_truck", {7.0, 2.4, 2.6}, {10.0, 2.6, 3.4}, {0.1, 0.3, 0.9}, 1.6},
  };
}

std::vector<Box3D> Scene::boxes() const {
  std::vector<Box3D> out;
  out.reserve(objects.size());
  for (const auto& o : objects) out.push_back(o.box);
  return out;
}

std::array<double, 3> to_polar(const std::array<double, 3>& p) {
  const double ground = std::hypot(p[0], p[1]);
  return {std::hypot(ground, p[2]), std::atan2(p[1], p[0]), std::atan2(p[2], ground)};
}

std::array<double, 3> to_cartesian(const std::array<double, 3>& polar) {
  const double r = polar[0], az = polar[1], el = polar[2];
  return {r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az), r * std::sin(el)};
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& config, const SensorRig& rig) {
  if (config.classes.empty()) throw std::invalid_argument("scene config has no object classes");
  if (config.min_objects < 0 || config.max_objects < config.min_objects)
    throw std::invalid_argument("invalid object count range");
  std::mt19937_64 rng(seed);
  Scene scene;
  scene.seed = seed;

  std::discrete_distribution<int> cond(config.condition_weights.begin(), config.condition_weights.end());
  scene.condition = kAllConditions[static_cast<std::size_t>(cond(rng))];
  scene.daytime = std::bernoulli_distribution(config.night_probability)(rng) ? Daytime::night : Daytime::day;

  const int count = std::uniform_int_distribution<int>(config.min_objects, config.max_objects)(rng);
  const double az_lim = rig.radar.fov_azimuth - config.azimuth_margin;
  const double r_hi = std::min(config.range_max, rig.radar.range_max);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, static_cast<int>(config.classes.size()) - 1);

  for (int i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < config.rejection_attempts && !placed; ++attempt) {
      SceneObject obj;
      const int c = cls(rng);
      const auto& oc = config.classes[c];
      obj.box.class_id = c;
      for (int k = 0; k < 3; ++k) obj.box.size[k] = oc.size_min[k] + u01(rng) * (oc.size_max[k] - oc.size_min[k]);
      const double r = config.range_min + u01(rng) * (r_hi - config.range_min);
      const double az = -az_lim + u01(rng) * 2.0 * az_lim;
      obj.box.center = {r * std::cos(az), r * std::sin(az), -rig.mount_height + 0.5 * obj.box.size[2]};
      obj.box.heading = -std::numbers::pi + u01(rng) * 2.0 * std::numbers::pi;
      obj.box.heading = wrap_angle(obj.box.heading);
      obj.box.score = 1.0;
      obj.radial_velocity = config.static_objects
                                ? 0.0
                                : -rig.radar.doppler_max + u01(rng) * 2.0 * rig.radar.doppler_max;

      const auto polar = to_polar(obj.box.center);
      if (std::abs(polar[2]) > rig.radar.fov_elevation || polar[0] > rig.radar.range_max) continue;
      const bool overlaps = std::any_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& o) {
        return iou_bev(o.box, obj.box) > config.max_pair_iou;
      });
      if (overlaps) continue;
      scene.objects.push_back(obj);
      placed = true;
    }
    if (!placed) {
      throw SceneGenerationError("could not place object " + std::to_string(i) + " without overlap (seed " +
                                 std::to_string(seed) + ")");
    }
  }
  return scene;
}

WeatherEffect weather_effect(Condition c) {
  switch (c) {
    case Condition::normal: return {0.0, 0.0, 1.0};
    case Condition::overcast: return {0.1, 0.01, 1.0};
    case Condition::fog: return {0.6, 0.02, 1.2};
    case Condition::rain: return {0.3, 0.05, 1.3};
    case Condition::sleet: return {0.4, 0.06, 1.4};
    case Condition::light_snow: return {0.35, 0.05, 1.3};
    case Condition::heavy_snow: return {0.6, 0.1, 1.6};
  }
  return {0.0, 0.0, 1.0};
}

CameraFrame render_camera(const Scene& scene, const SensorRig& rig, const SceneConfig& config) {
  const int h = rig.image_height, w = rig.image_width;
  CameraFrame frame{Tensor({h, w, 3}), rig.intrinsics, rig.extrinsics};
  const std::array<double, 3> background{0.55, 0.6, 0.65};
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c) frame.pixels.at(i, j, c) = background[c];

  // Painter's order: far objects first.
  std::vector<const SceneObject*> order;
  for (const auto& o : scene.objects) order.push_back(&o);
  std::sort(order.begin(), order.end(),
            [](const SceneObject* a, const SceneObject* b) { return a->box.range() > b->box.range(); });

  const auto& K = rig.intrinsics;
  for (const SceneObject* obj : order) {
    std::vector<Point2> pts;
    bool behind = false;
    for (const auto& corner : obj->box.corners()) {
      const auto pc = rig.extrinsics.apply(corner);
      if (pc[2] <= 0.1) {
        behind = true;
        break;
      }
      pts.push_back({K.fx * pc[0] / pc[2] + K.cx, K.fy * pc[1] / pc[2] + K.cy});
    }
    if (behind) continue;
    const auto hull = convex_hull(pts);
    if (hull.size() < 3) continue;
    double umin = hull[0][0], umax = umin, vmin = hull[0][1], vmax = vmin;
    for (const auto& p : hull) {
      umin = std::min(umin, p[0]);
      umax = std::max(umax, p[0]);
      vmin = std::min(vmin, p[1]);
      vmax = std::max(vmax, p[1]);
    }
    const auto& color = config.classes.at(obj->box.class_id).color;
    const double shade = 1.0 - 0.4 * obj->box.range() / rig.radar.range_max;
    const int j0 = std::max(0, static_cast<int>(std::floor(umin))), j1 = std::min(w - 1, static_cast<int>(std::ceil(umax)));
    const int i0 = std::max(0, static_cast<int>(std::floor(vmin))), i1 = std::min(h - 1, static_cast<int>(std::ceil(vmax)));
    for (int i = i0; i <= i1; ++i)
      for (int j = j0; j <= j1; ++j)
        if (inside_convex(hull, {j + 0.5, i + 0.5}))
          for (int c = 0; c < 3; ++c) frame.pixels.at(i, j, c) = color[c] * shade;
  }

  if (scene.daytime == Daytime::night) frame.pixels.scale_(kNightFactor);
  if (config.weather_effects) {
    const auto fx = weather_effect(scene.condition);
    std::mt19937_64 rng(derive_seed(scene.seed, SeedStream::camera_noise));
    std::normal_distribution<double> noise(0.0, 1.0);
    const double grey = scene.daytime == Daytime::night ? 0.5 * kNightFactor : 0.5;
    for (double& v : frame.pixels.values()) {
      v = (1.0 - fx.contrast_loss) * v + fx.contrast_loss * grey;
      if (fx.pixel_noise > 0) v += fx.pixel_noise * noise(rng);
      v = std::clamp(v, 0.0, 1.0);
    }
  }
  return frame;
}

RadarCube render_radar(const Scene& scene, const SensorRig& rig, const SceneConfig& config) {
  const auto& spec = rig.radar;
  RadarCube cube;
  cube.range_axis = spec.range_axis();
  cube.azimuth_axis = spec.azimuth_axis();
  cube.elevation_axis = spec.elevation_axis();
  cube.doppler_axis = spec.doppler_axis();
  cube.power = Tensor({spec.range_bins, spec.azimuth_bins, spec.elevation_bins, spec.doppler_bins});

  const double floor_mean =
      config.radar_noise_floor * (config.weather_effects ? weather_effect(scene.condition).radar_noise : 1.0);
  if (floor_mean > 0.0) {
    std::mt19937_64 rng(derive_seed(scene.seed, SeedStream::radar_noise));
    std::exponential_distribution<double> noise(1.0 / floor_mean);
    for (double& v : cube.power.values()) v = noise(rng);
  }

  const double dr = spec.range_max / spec.range_bins;
  const double da = 2.0 * spec.fov_azimuth / spec.azimuth_bins;
  const double de = 2.0 * spec.fov_elevation / spec.elevation_bins;
  const double dd = 2.0 * spec.doppler_max / spec.doppler_bins;
  // Blob widths in bins.
  const double sr = 0.7, sa = 0.7, se = 1.0, sd = 0.6;

  for (const auto& obj : scene.objects) {
    const double peak = config.classes.at(obj.box.class_id).radar_power;
    // Centre scatterer plus weaker returns from the footprint corners so the
    // RA map carries extent and orientation.
    std::vector<std::pair<std::array<double, 3>, double>> scatterers{{obj.box.center, 1.0}};
    for (const auto& c : obj.box.bev_corners()) scatterers.push_back({{c[0], c[1], obj.box.center[2]}, 0.35});

    for (const auto& [pos, weight] : scatterers) {
      const auto polar = to_polar(pos);
      const double rb = polar[0] / dr - 0.5;
      const double ab = (polar[1] + spec.fov_azimuth) / da - 0.5;
      const double eb = (polar[2] + spec.fov_elevation) / de - 0.5;
      const double db = obj.radial_velocity / dd + spec.doppler_bins / 2;
      auto window = [](double centre, double sigma, int n) {
        const int lo = std::max(0, static_cast<int>(std::floor(centre - 3 * sigma)));
        const int hi = std::min(n - 1, static_cast<int>(std::ceil(centre + 3 * sigma)));
        return std::pair{lo, hi};
      };
      const auto [r0, r1] = window(rb, sr, spec.range_bins);
      const auto [a0, a1] = window(ab, sa, spec.azimuth_bins);
      const auto [e0, e1] = window(eb, se, spec.elevation_bins);
      const auto [d0, d1] = window(db, sd, spec.doppler_bins);
      for (int r = r0; r <= r1; ++r) {
        const double gr = (r - rb) / sr;
        for (int a = a0; a <= a1; ++a) {
          const double ga = (a - ab) / sa;
          for (int e = e0; e <= e1; ++e) {
            const double ge = (e - eb) / se;
            const double spatial = peak * weight * std::exp(-0.5 * (gr * gr + ga * ga + ge * ge));
            for (int d = d0; d <= d1; ++d) {
              const double gd = (d - db) / sd;
              cube.at(r, a, e, d) += spatial * std::exp(-0.5 * gd * gd);
            }
          }
        }
      }
    }
  }
  return cube;
}

}  // namespace dpft
