#include <filesystem>

#include "doctest.h"
#include "dpft/dataset.hpp"
#include "dpft/iou.hpp"
#include "dpft/synthetic.hpp"

using namespace dpft;
namespace fs = std::filesystem;

namespace {

SceneObject object_at(double range, double azimuth, int cls, double velocity, const SensorRig& rig) {
  SceneObject o;
  o.box.class_id = cls;
  o.box.size = {4.5, 1.9, 1.6};
  o.box.center = {range * std::cos(azimuth), range * std::sin(azimuth), -rig.mount_height + 0.8};
  o.radial_velocity = velocity;
  return o;
}

double mean(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s / static_cast<double>(t.size());
}

}  // namespace

TEST_SUITE("synthetic") {
  TEST_CASE("no objects requested gives an empty scene") {
    SceneConfig cfg;
    cfg.min_objects = cfg.max_objects = 0;
    CHECK(generate_scene(0, cfg, SensorRig::make_default()).objects.empty());
  }

  TEST_CASE("scene generation is deterministic in the seed") {
    const SceneConfig cfg;
    const SensorRig rig = SensorRig::make_default();
    const Scene a = generate_scene(42, cfg, rig), b = generate_scene(42, cfg, rig);
    REQUIRE(a.objects.size() == b.objects.size());
    for (std::size_t i = 0; i < a.objects.size(); ++i) {
      CHECK(a.objects[i].box.center == b.objects[i].box.center);
      CHECK(a.objects[i].box.heading == b.objects[i].box.heading);
      CHECK(a.objects[i].radial_velocity == b.objects[i].radial_velocity);
    }
    const Sample s1 = synthesize_sample(42, cfg, rig), s2 = synthesize_sample(42, cfg, rig);
    CHECK(s1.camera.pixels.storage() == s2.camera.pixels.storage());
    CHECK(s1.cube.power.storage() == s2.cube.power.storage());
  }

  TEST_CASE("seed 7 with five objects: non-overlapping and inside the field of view") {
    SceneConfig cfg;
    cfg.min_objects = cfg.max_objects = 5;
    const SensorRig rig = SensorRig::make_default();
    const Scene s = generate_scene(7, cfg, rig);
    REQUIRE(s.objects.size() == 5);
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const auto polar = to_polar(s.objects[i].box.center);
      CHECK(polar[0] <= rig.radar.range_max);
      CHECK(std::abs(polar[1]) <= rig.radar.fov_azimuth);
      CHECK(std::abs(polar[2]) <= rig.radar.fov_elevation);
      for (std::size_t j = i + 1; j < s.objects.size(); ++j)
        CHECK(iou_bev(s.objects[i].box, s.objects[j].box) <= cfg.max_pair_iou);
    }
  }

  TEST_CASE("impossible packing reports a generation error") {
    SceneConfig cfg;
    cfg.min_objects = cfg.max_objects = 60;
    cfg.range_min = 10.0;
    cfg.range_max = 11.0;
    cfg.max_pair_iou = 0.0;
    cfg.rejection_attempts = 20;
    CHECK_THROWS_AS(generate_scene(1, cfg, SensorRig::make_default()), SceneGenerationError);
  }

  TEST_CASE("polar and cartesian conversions are inverse") {
    const std::array<double, 3> p{12.0, 0.3, -0.05};
    const auto back = to_polar(to_cartesian(p));
    for (int k = 0; k < 3; ++k) CHECK(back[k] == doctest::Approx(p[k]));
  }

  TEST_CASE("empty scene renders a uniform background") {
    const SensorRig rig = SensorRig::make_default();
    const Scene s;
    const CameraFrame f = render_camera(s, rig, SceneConfig{});
    for (int c = 0; c < 3; ++c) {
      const double ref = f.pixels.at(0, 0, c);
      for (int i = 0; i < f.height(); i += 7)
        for (int j = 0; j < f.width(); j += 5) CHECK(f.pixels.at(i, j, c) == ref);
    }
  }

  TEST_CASE("a box straight ahead changes pixels around the principal point") {
    const SensorRig rig = SensorRig::make_default();
    Scene s;
    const CameraFrame empty = render_camera(s, rig, SceneConfig{});
    s.objects.push_back(object_at(15.0, 0.0, 0, 0.0, rig));
    const CameraFrame f = render_camera(s, rig, SceneConfig{});
    const int ci = static_cast<int>(rig.intrinsics.cy), cj = static_cast<int>(rig.intrinsics.cx);
    CHECK(f.pixels.at(ci, cj, 0) != empty.pixels.at(ci, cj, 0));
    CHECK(f.pixels.at(0, 0, 0) == empty.pixels.at(0, 0, 0));
  }

  TEST_CASE("night rendering is darker than day") {
    const SensorRig rig = SensorRig::make_default();
    SceneConfig cfg;
    cfg.min_objects = cfg.max_objects = 3;
    Scene s = generate_scene(5, cfg, rig);
    s.daytime = Daytime::day;
    const double day = mean(render_camera(s, rig, cfg).pixels);
    s.daytime = Daytime::night;
    const double night = mean(render_camera(s, rig, cfg).pixels);
    CHECK(night < day);
  }

  TEST_CASE("empty scene without noise gives an all-zero cube") {
    SceneConfig cfg;
    cfg.radar_noise_floor = 0.0;
    const RadarCube c = render_radar(Scene{}, SensorRig::make_default(), cfg);
    for (double v : c.power.values()) CHECK(v == 0.0);
  }

  TEST_CASE("static object peaks at the zero-velocity Doppler bin and its range bin") {
    SceneConfig cfg;
    cfg.radar_noise_floor = 0.0;
    const SensorRig rig = SensorRig::make_default();
    Scene s;
    s.objects.push_back(object_at(30.0, 0.05, 0, 0.0, rig));
    const RadarCube c = render_radar(s, rig, cfg);
    std::size_t best = 0;
    for (std::size_t i = 1; i < c.power.size(); ++i)
      if (c.power[i] > c.power[best]) best = i;
    const int D = c.doppler_bins(), E = c.elevation_bins(), A = c.azimuth_bins();
    const int d = static_cast<int>(best % D);
    const int r = static_cast<int>(best / (static_cast<std::size_t>(D) * E * A));
    CHECK(c.doppler_axis[d] == 0.0);
    const double dr = rig.radar.range_max / rig.radar.range_bins;
    CHECK(r == static_cast<int>(std::floor(30.0 / dr)));
  }

  TEST_CASE("weather lowers camera contrast") {
    const SensorRig rig = SensorRig::make_default();
    SceneConfig cfg;
    cfg.min_objects = cfg.max_objects = 4;
    Scene s = generate_scene(9, cfg, rig);
    auto spread = [&](Condition c) {
      s.condition = c;
      const Tensor px = render_camera(s, rig, cfg).pixels;
      const double m = mean(px);
      double v = 0.0;
      for (double x : px.values()) v += (x - m) * (x - m);
      return v / static_cast<double>(px.size());
    };
    CHECK(spread(Condition::fog) < spread(Condition::normal));
  }

  TEST_CASE("png round trip quantises to 8 bits") {
    Tensor px({4, 5, 3});
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = (i % 11) / 10.0;
    const fs::path p = fs::temp_directory_path() / "dpft_test.png";
    write_png(p, px);
    const Tensor back = read_png(p);
    REQUIRE(back.shape() == px.shape());
    for (std::size_t i = 0; i < px.size(); ++i) CHECK(std::abs(back[i] - px[i]) <= 0.5 / 255.0 + 1e-12);
    fs::remove(p);
  }

  TEST_CASE("sample directory round trip") {
    SceneConfig cfg;
    cfg.condition_weights = {0, 0, 1, 0, 0, 0, 0};
    cfg.night_probability = 1.0;
    const SensorRig rig = SensorRig::make_default(32, 64);
    const Sample s = synthesize_sample(3, cfg, rig);
    const fs::path dir = fs::temp_directory_path() / "dpft_test_sample";
    fs::remove_all(dir);
    write_sample(dir, s, cfg.classes);
    const Sample back = read_sample(dir);
    CHECK(back.scene.condition == Condition::fog);
    CHECK(back.scene.daytime == Daytime::night);
    REQUIRE(back.scene.objects.size() == s.scene.objects.size());
    for (std::size_t i = 0; i < s.scene.objects.size(); ++i) {
      CHECK(back.scene.objects[i].box.center == s.scene.objects[i].box.center);
      CHECK(back.scene.objects[i].box.class_id == s.scene.objects[i].box.class_id);
    }
    for (std::size_t i = 0; i < s.cube.power.size(); ++i)
      REQUIRE(back.cube.power[i] == static_cast<double>(static_cast<float>(s.cube.power[i])));
    CHECK(back.rig.image_height == 32);
    CHECK(rig_to_json(back.rig) == rig_to_json(rig));
    fs::remove_all(dir);
  }

  TEST_CASE("condition and daytime names round trip") {
    for (Condition c : kAllConditions) CHECK(parse_condition(to_string(c)) == c);
    CHECK(parse_daytime("night") == Daytime::night);
    CHECK_THROWS(parse_condition("hail"));
  }
}
