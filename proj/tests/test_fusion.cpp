#include <numbers>
#include <random>

#include "doctest.h"
#include "dpft/fusion.hpp"
#include "dpft/synthetic.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dpft;

TEST_SUITE("fusion") {
  TEST_CASE("query grid covers range x azimuth at cell centres") {
    QueryGridConfig cfg;
    cfg.num_queries = 16;
    cfg.dim = 8;
    const QuerySet q = init_queries(cfg, 3);
    REQUIRE(q.size() == 16);
    CHECK(q.positions.at(0, 0) == doctest::Approx(9.0));
    CHECK(q.positions.at(15, 0) == doctest::Approx(63.0));
    CHECK(q.positions.at(0, 1) == doctest::Approx(-cfg.fov_azimuth * 0.75));
    for (double v : q.features.value().values()) {
      CHECK(v >= 0.0);
      CHECK(v < 1.0);
    }
    CHECK(init_queries(cfg, 3).features.value().storage() == q.features.value().storage());
    CHECK_THROWS(query_grid_side(15));
    CHECK(query_grid_side(900) == 30);
  }

  TEST_CASE("point on the optical axis projects to the principal point") {
    const SensorRig rig = SensorRig::make_default();
    const auto p = project_to_camera({20.0, 0.0, 0.0}, rig.intrinsics, rig.extrinsics, rig.image_height,
                                     rig.image_width);
    CHECK(p.valid);
    CHECK(p.u == doctest::Approx(rig.intrinsics.cx));
    CHECK(p.v == doctest::Approx(rig.intrinsics.cy));
  }

  TEST_CASE("point behind the camera is invalid") {
    const SensorRig rig = SensorRig::make_default();
    const auto p = project_to_camera({10.0, std::numbers::pi, 0.0}, rig.intrinsics, rig.extrinsics,
                                     rig.image_height, rig.image_width);
    CHECK_FALSE(p.valid);
  }

  TEST_CASE("camera projection of r=10, az=0.1 by hand") {
    const SensorRig rig = SensorRig::make_default();
    const double f = 0.5 * rig.image_width / std::tan(rig.radar.fov_azimuth);
    // Ego (10 cos .1, 10 sin .1, 0) -> camera (-10 sin .1, 0, 10 cos .1).
    const double u = f * (-10.0 * std::sin(0.1)) / (10.0 * std::cos(0.1)) + 0.5 * rig.image_width;
    const auto p = project_to_camera({10.0, 0.1, 0.0}, rig.intrinsics, rig.extrinsics, rig.image_height,
                                     rig.image_width);
    CHECK(p.valid);
    CHECK(p.u == doctest::Approx(u).epsilon(1e-12));
    CHECK(p.v == doctest::Approx(0.5 * rig.image_height).epsilon(1e-12));
    CHECK(p.u < rig.intrinsics.cx);
  }

  TEST_CASE("radar plane coordinates") {
    RadarGrid g;
    g.range_min = 0.0;
    g.range_max = 72.0;
    g.range_bins = 58;
    g.azimuth_bins = 32;
    const auto mid = project_to_radar_plane({20.0, 0.0, 0.0}, RadarPlane::ra, g);
    CHECK(mid.u == doctest::Approx(15.5));
    const auto edge = project_to_radar_plane({72.0, 0.0, 0.0}, RadarPlane::ra, g);
    CHECK(edge.v == doctest::Approx(57.5));
    CHECK(edge.valid);
    const auto r18 = project_to_radar_plane({18.0, 0.0, 0.0}, RadarPlane::ra, g);
    CHECK(r18.v == doctest::Approx(14.0));
    CHECK_FALSE(project_to_radar_plane({80.0, 0.0, 0.0}, RadarPlane::ra, g).valid);
    const auto ae = project_to_radar_plane({30.0, 0.0, 0.0}, RadarPlane::ae, g);
    CHECK(ae.v == doctest::Approx(15.5));
    CHECK(ae.u == doctest::Approx(7.5));
  }

  TEST_CASE("radar grid edges from a cube") {
    std::mt19937_64 rng(1);
    const RadarCube cube = trim_artifacts(oracle::random_cube(rng, 64, 32, 16, 8), 3);
    const RadarGrid g = RadarGrid::from_cube(cube);
    CHECK(g.range_min == doctest::Approx(3 * 72.0 / 64));
    CHECK(g.range_max == doctest::Approx(61 * 72.0 / 64));
    CHECK(g.range_bins == 58);
  }

  TEST_CASE("positional encoding of a zero map is the encoding itself") {
    FeaturePyramid p;
    p.levels.push_back(ag::constant(Tensor({8, 3, 5})));
    const FeaturePyramid e = positional_encode(p);
    CHECK(e.levels[0].value().storage() == positional_encoding(8, 3, 5).storage());
    const Tensor pe = positional_encoding(8, 3, 5);
    for (double v : pe.values()) CHECK(std::abs(v) <= 1.0);
    CHECK(pe.at(0, 0, 0) != pe.at(0, 2, 0));
    CHECK(pe.at(4, 0, 0) != pe.at(4, 0, 4));
    CHECK_THROWS_AS(positional_encoding(6, 2, 2), ShapeError);
  }

  TEST_CASE("constructed attention reduces to one bilinear sample") {
    nn::ParamStore store;
    nn::Initializer init(4);
    const int D = 4;
    DeformableAttention attn(store, init, "a", {D, 2, 2, 2});
    store.value(attn.offset_net().weight).fill(0.0);
    store.value(attn.offset_net().bias).fill(0.0);
    store.value(attn.weight_net().weight).fill(0.0);
    Tensor& wb = store.value(attn.weight_net().bias);
    wb.fill(0.0);
    // head h, level 1, point 0 for both heads
    wb[0 * 4 + 1 * 2 + 0] = 1e3;
    wb[1 * 4 + 1 * 2 + 0] = 1e3;
    Tensor& vw = store.value(attn.value_proj().weight);
    vw.fill(0.0);
    for (int c = 0; c < D; ++c) vw[c * D + c] = 1.0;
    store.value(attn.value_proj().bias).fill(0.0);

    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Tensor> pyr{Tensor({D, 2, 3}), Tensor({D, 4, 6})};
    for (auto& t : pyr)
      for (auto& v : t.values()) v = g(rng);
    Tensor q({2, D});
    for (auto& v : q.values()) v = g(rng);
    ReferencePoints refs{{{0.3, 0.6}, {0.8, 0.1}}, {1, 1}};

    nn::Context ctx(store, false, 0, false);
    FeaturePyramid fp;
    for (const auto& t : pyr) fp.levels.push_back(ag::constant(t));
    const Tensor out = attn(ctx, ag::constant(q), attn.project_values(ctx, fp), refs).value();
    for (int n = 0; n < 2; ++n) {
      std::vector<double> s(D);
      for (int c = 0; c < D; ++c)
        s[c] = oracle::sample(pyr[1], c, refs.normalized[n][0] * 6 - 0.5, refs.normalized[n][1] * 4 - 0.5);
      const auto want = oracle::dense(store.value(attn.output_proj().weight), store.value(attn.output_proj().bias), s);
      for (int c = 0; c < D; ++c) CHECK(out.at(n, c) == doctest::Approx(want[c]).epsilon(1e-12));
    }
  }

  TEST_CASE("all-invalid queries give a zero output") {
    nn::ParamStore store;
    nn::Initializer init(6);
    DeformableAttention attn(store, init, "a", {8, 2, 1, 2});
    FeaturePyramid fp;
    fp.levels.push_back(ag::constant(Tensor({8, 3, 3}, 1.0)));
    nn::Context ctx(store, false, 0, false);
    ReferencePoints refs{{{0.5, 0.5}, {0.2, 0.2}, {0.9, 0.9}}, {0, 0, 0}};
    const Tensor out = attn(ctx, ag::constant(Tensor({3, 8}, 0.5)), attn.project_values(ctx, fp), refs).value();
    for (double v : out.values()) CHECK(v == 0.0);
  }

  TEST_CASE("deformable attention matches the naive oracle on random cases") {
    for (std::uint64_t seed = 100; seed < 120; ++seed) CHECK(fixture::deformable_attention_case(seed) <= 1e-9);
  }

  TEST_CASE("bilinear sampling agrees with the triangle-kernel form") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.5, 5.5);
    Tensor m({1, 4, 5});
    for (auto& v : m.values()) v = u(rng);
    for (int i = 0; i < 200; ++i) {
      const double x = u(rng), y = u(rng);
      CHECK(ag::bilinear_zero_pad(m.data(), 4, 5, x, y) == doctest::Approx(oracle::sample(m, 0, x, y)).epsilon(1e-12));
    }
  }

  TEST_CASE("masked max semantics") {
    Tensor a({2, 3}), b({2, 3}), fb({2, 3}, -5.0);
    for (int i = 0; i < 6; ++i) {
      a[i] = i;
      b[i] = 10 - i;
    }
    const auto va = ag::constant(a), vb = ag::constant(b), vf = ag::constant(fb);
    // Row 0: only a valid; row 1: neither.
    Tensor out = ag::masked_max({va, vb}, {{1, 0}, {0, 0}}, vf).value();
    for (int c = 0; c < 3; ++c) {
      CHECK(out.at(0, c) == a.at(0, c));
      CHECK(out.at(1, c) == -5.0);
    }
    out = ag::masked_max({va, va, va}, {{1, 1}, {1, 1}, {1, 1}}, vf).value();
    CHECK(out.storage() == a.storage());
    out = ag::masked_max({va, vb}, {{1, 1}, {1, 1}}, vf).value();
    for (int i = 0; i < 6; ++i) CHECK(out[i] == std::max(a[i], b[i]));
  }

  TEST_CASE("fusion block with one valid sensor returns that branch") {
    fixture::TinyComposite t(21);
    nn::Context ctx(t.store, false, 0, false);
    std::vector<SensorInput> sensors;
    for (std::size_t s = 0; s < 3; ++s) {
      FeaturePyramid pyr;
      for (const auto& l : t.pyramids[s]) pyr.levels.push_back(ag::constant(l));
      SensorInput in{t.fusion.config().sensors[s], t.fusion.cross(s).project_values(ctx, pyr), t.refs[s]};
      for (auto& v : in.refs.valid) v = s == 1;
      sensors.push_back(std::move(in));
    }
    const ag::Var x = ag::constant(t.features);
    const Tensor fused = t.fusion(ctx, x, t.positions, sensors).value();
    const ag::Var sa = t.fusion.self_attend(ctx, x, t.positions);
    const Tensor branch = t.fusion.sensor_branch(ctx, 1, sa, sensors[1]).value();
    for (std::size_t i = 0; i < fused.size(); ++i) CHECK(fused[i] == doctest::Approx(branch[i]).epsilon(1e-12));

    for (auto& s : sensors) std::fill(s.refs.valid.begin(), s.refs.valid.end(), 0);
    const Tensor none = t.fusion(ctx, x, t.positions, sensors).value();
    const Tensor self = sa.value();
    for (std::size_t i = 0; i < none.size(); ++i) CHECK(none[i] == doctest::Approx(self[i]).epsilon(1e-12));
  }

  TEST_CASE("query position embedding differs across the grid") {
    QueryGridConfig cfg;
    cfg.num_queries = 4;
    const QuerySet q = init_queries(cfg, 1);
    const Tensor e = query_position_embedding(q.positions, 16, cfg.range_max, cfg.fov_azimuth);
    CHECK(e.shape() == Shape{4, 16});
    CHECK(e.at(0, 0) != e.at(2, 0));
    CHECK(e.at(0, 8) != e.at(1, 8));
  }
}
