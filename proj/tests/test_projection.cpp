#include <filesystem>
#include <random>

#include "doctest.h"
#include "dpft/projection.hpp"
#include "oracles.hpp"

using namespace dpft;

namespace {

RadarCube sequential_cube(int R, int A, int E, int D) {
  std::mt19937_64 rng(1);
  RadarCube c = oracle::random_cube(rng, R, A, E, D);
  for (std::size_t i = 0; i < c.power.size(); ++i) c.power[i] = static_cast<double>(i + 1);
  return c;
}

void require_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(a[i] - b[i]) <= tol);
}

}  // namespace

TEST_SUITE("projection") {
  TEST_CASE("trim removes margin bins from both ends of the range axis") {
    std::mt19937_64 rng(3);
    const RadarCube cube = oracle::random_cube(rng, 64, 4, 2, 2);
    const RadarCube t = trim_artifacts(cube, 3);
    CHECK(t.range_bins() == 58);
    CHECK(t.range_axis.size() == 58);
    CHECK(t.range_axis.front() == cube.range_axis[3]);
    CHECK(t.at(0, 1, 1, 0) == cube.at(3, 1, 1, 0));
    CHECK(t.at(57, 3, 0, 1) == cube.at(60, 3, 0, 1));
  }

  TEST_CASE("trim with margin 0 is the identity") {
    std::mt19937_64 rng(4);
    const RadarCube cube = oracle::random_cube(rng, 6, 3, 2, 2);
    const RadarCube t = trim_artifacts(cube, 0);
    CHECK(t.power.storage() == cube.power.storage());
    CHECK(t.range_axis == cube.range_axis);
  }

  TEST_CASE("trim of length 7 by 3 leaves one bin, shorter axes are rejected") {
    std::mt19937_64 rng(5);
    CHECK(trim_artifacts(oracle::random_cube(rng, 7, 2, 2, 2), 3).range_bins() == 1);
    CHECK_THROWS_AS(trim_artifacts(oracle::random_cube(rng, 6, 2, 2, 2), 3), InvalidInput);
    CHECK_THROWS_AS(trim_artifacts(oracle::random_cube(rng, 8, 2, 2, 2), -1), InvalidInput);
  }

  TEST_CASE("trim along another axis") {
    std::mt19937_64 rng(6);
    const RadarCube cube = oracle::random_cube(rng, 4, 10, 2, 3);
    const RadarCube t = trim_artifacts(cube, 2, CubeAxis::azimuth);
    CHECK(t.azimuth_bins() == 6);
    CHECK(t.range_bins() == 4);
    CHECK(t.at(1, 0, 1, 2) == cube.at(1, 2, 1, 2));
  }

  TEST_CASE("reduce_stats on small sequences") {
    const std::vector<double> one{5};
    auto s = reduce_stats(one);
    CHECK(s.max == 5);
    CHECK(s.median == 5);
    CHECK(s.variance == 0);

    const std::vector<double> four{1, 2, 3, 4};
    s = reduce_stats(four);
    CHECK(s.max == 4);
    CHECK(s.median == doctest::Approx(2.5));
    CHECK(s.variance == doctest::Approx(1.25));

    const std::vector<double> same(9, 2.75);
    s = reduce_stats(same);
    CHECK(s.max == 2.75);
    CHECK(s.median == 2.75);
    CHECK(s.variance == doctest::Approx(0.0).scale(1));

    CHECK_THROWS_AS(reduce_stats(std::span<const double>{}), InvalidInput);
  }

  TEST_CASE("zero cube projects to zero amplitude and the lowest-bin velocity") {
    std::mt19937_64 rng(7);
    RadarCube cube = oracle::random_cube(rng, 4, 3, 2, 5);
    cube.power.fill(0.0);
    const DualProjection p = project_cube(cube);
    for (int r = 0; r < 4; ++r)
      for (int a = 0; a < 3; ++a) {
        for (int c = 0; c < 3; ++c) CHECK(p.ra.at(r, a, c) == 0.0);
        CHECK(p.ra.at(r, a, kDopMax) == cube.doppler_axis[0]);
        CHECK(p.ra.at(r, a, kDopMedian) == cube.doppler_axis[0]);
        CHECK(p.ra.at(r, a, kDopVar) == 0.0);
      }
    for (int c = 0; c < 3; ++c) CHECK(p.ae.at(1, 1, c) == 0.0);
    CHECK(p.ae.at(2, 0, kDopMax) == cube.doppler_axis[0]);
  }

  TEST_CASE("2x2x2x2 cube of 1..16 matches the loop oracle") {
    const RadarCube cube = sequential_cube(2, 2, 2, 2);
    const DualProjection p = project_cube(cube);
    const auto [ra, ae] = oracle::project_cube(cube);
    require_close(p.ra, ra, 1e-12);
    require_close(p.ae, ae, 1e-12);
    // Cell (0,0) holds 1,2,3,4 (e and d varying fastest).
    CHECK(p.ra.at(0, 0, kAmpMax) == 4);
    CHECK(p.ra.at(0, 0, kAmpMedian) == doctest::Approx(2.5));
    CHECK(p.ra.at(0, 0, kAmpVar) == doctest::Approx(1.25));
  }

  TEST_CASE("random cubes match the loop oracle") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 8; ++trial) {
      std::uniform_int_distribution<int> dim(1, 9);
      const RadarCube cube = oracle::random_cube(rng, dim(rng), dim(rng), dim(rng), dim(rng));
      const DualProjection p = project_cube(cube);
      const auto [ra, ae] = oracle::project_cube(cube);
      require_close(p.ra, ra, 1e-9);
      require_close(p.ae, ae, 1e-9);
    }
  }

  TEST_CASE("trimmed full-size cube yields 58x32 and 32x16 maps") {
    std::mt19937_64 rng(9);
    const RadarCube cube = trim_artifacts(oracle::random_cube(rng, 64, 32, 16, 8), 3);
    const DualProjection p = project_cube(cube);
    CHECK(p.ra.shape() == Shape{58, 32, 6});
    CHECK(p.ae.shape() == Shape{32, 16, 6});
  }

  TEST_CASE("log amplitude compresses power before reduction") {
    std::mt19937_64 rng(10);
    const RadarCube cube = oracle::random_cube(rng, 3, 3, 2, 2);
    RadarCube logged = cube;
    for (auto& v : logged.power.values()) v = std::log1p(v);
    const DualProjection a = project_cube(cube, {.log_amplitude = true});
    const DualProjection b = project_cube(logged);
    require_close(a.ra, b.ra, 1e-12);
  }

  TEST_CASE("invalid cubes are rejected") {
    std::mt19937_64 rng(11);
    RadarCube cube = oracle::random_cube(rng, 3, 3, 2, 2);
    cube.at(1, 1, 1, 1) = -1.0;
    CHECK_THROWS_AS(cube.validate(), InvalidInput);
    cube.at(1, 1, 1, 1) = std::nan("");
    CHECK_THROWS_AS(project_cube(cube), InvalidInput);
    cube = oracle::random_cube(rng, 3, 3, 2, 2);
    cube.range_axis.pop_back();
    CHECK_THROWS_AS(cube.validate(), InvalidInput);
  }

  TEST_CASE("cube file round trip") {
    std::mt19937_64 rng(12);
    const RadarCube cube = oracle::random_cube(rng, 5, 4, 3, 2);
    const auto path = std::filesystem::temp_directory_path() / "dpft_test_cube.bin";
    write_cube(path, cube);
    const RadarCube back = read_cube(path);
    CHECK(back.power.shape() == cube.power.shape());
    // Stored as 32-bit floats.
    for (std::size_t i = 0; i < cube.power.size(); ++i)
      CHECK(back.power[i] == static_cast<double>(static_cast<float>(cube.power[i])));
    for (std::size_t i = 0; i < cube.doppler_axis.size(); ++i)
      CHECK(back.doppler_axis[i] == static_cast<double>(static_cast<float>(cube.doppler_axis[i])));
    std::filesystem::remove(path);
  }

  TEST_CASE("resize halves a 1024x2048 image and its intrinsics") {
    CameraFrame f;
    f.pixels = Tensor({1024, 2048, 3}, 0.25);
    f.intrinsics = {1000.0, 1000.0, 1024.0, 512.0};
    const CameraFrame r = resize_image(f, 512);
    CHECK(r.height() == 512);
    CHECK(r.width() == 1024);
    CHECK(r.intrinsics.fx == doctest::Approx(500.0));
    CHECK(r.intrinsics.fy == doctest::Approx(500.0));
    CHECK(r.intrinsics.cx == doctest::Approx(512.0));
    CHECK(r.intrinsics.cy == doctest::Approx(256.0));
    for (std::size_t i = 0; i < r.pixels.size(); i += 997) CHECK(r.pixels[i] == doctest::Approx(0.25));
  }

  TEST_CASE("resize to the current height is the identity") {
    CameraFrame f;
    f.pixels = Tensor({6, 8, 3});
    for (std::size_t i = 0; i < f.pixels.size(); ++i) f.pixels[i] = (i % 7) / 7.0;
    const CameraFrame r = resize_image(f, 6);
    CHECK(r.pixels.storage() == f.pixels.storage());
  }
}
