#include <random>

#include "doctest.h"
#include "dpft/backbone.hpp"
#include "oracles.hpp"

using namespace dpft;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : t.values()) v = g(rng);
  return t;
}

void zero_with_prefix(nn::ParamStore& store, const std::string& prefix) {
  for (int i = 0; i < store.count(); ++i)
    if (store.name(i).rfind(prefix, 0) == 0) store.value(i).fill(0.0);
}

}  // namespace

TEST_SUITE("backbone") {
  TEST_CASE("adapter with identity rows copies the first three channels") {
    nn::ParamStore store;
    nn::Initializer init(1);
    ChannelAdapter adapter(store, init, "ad");
    Tensor& w = store.value(adapter.conv().weight);
    w.fill(0.0);
    for (int o = 0; o < 3; ++o) w[o * 6 + o] = 1.0;
    store.value(adapter.conv().bias).fill(0.0);
    std::mt19937_64 rng(2);
    const Tensor x = random_tensor({6, 5, 7}, rng);
    nn::Context ctx(store, false, 0, false);
    const Tensor y = adapter(ctx, ag::constant(x)).value();
    REQUIRE(y.shape() == Shape{3, 5, 7});
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == x[i]);
  }

  TEST_CASE("adapter on zero input returns the bias") {
    nn::ParamStore store;
    nn::Initializer init(3);
    ChannelAdapter adapter(store, init, "ad");
    nn::Context ctx(store, false, 0, false);
    const Tensor y = adapter(ctx, ag::constant(Tensor({6, 2, 3}))).value();
    const Tensor& b = store.value(adapter.conv().bias);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 6; ++i) CHECK(y[c * 6 + i] == b[c]);
  }

  TEST_CASE("adapter matches a per-pixel matrix multiply") {
    nn::ParamStore store;
    nn::Initializer init(4);
    ChannelAdapter adapter(store, init, "ad");
    std::mt19937_64 rng(5);
    store.value(adapter.conv().bias) = random_tensor({3}, rng);
    const Tensor x = random_tensor({6, 4, 4}, rng);
    nn::Context ctx(store, false, 0, false);
    const Tensor y = adapter(ctx, ag::constant(x)).value();
    const Tensor& w = store.value(adapter.conv().weight);
    const Tensor& b = store.value(adapter.conv().bias);
    for (int o = 0; o < 3; ++o)
      for (int p = 0; p < 16; ++p) {
        double s = b[o];
        for (int c = 0; c < 6; ++c) s += w[o * 6 + c] * x[c * 16 + p];
        CHECK(y[o * 16 + p] == doctest::Approx(s).epsilon(1e-12));
      }
    CHECK_THROWS_AS(adapter(ctx, ag::constant(Tensor({5, 4, 4}))), ShapeError);
  }

  TEST_CASE("conv2d matches a direct loop with stride and padding") {
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor({2, 7, 6}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    const Tensor y = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), 2, 1).value();
    REQUIRE(y.shape() == Shape{3, 4, 3});
    for (int o = 0; o < 3; ++o)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) {
          double s = b[o];
          for (int c = 0; c < 2; ++c)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                const int yi = 2 * i - 1 + ki, xj = 2 * j - 1 + kj;
                if (yi < 0 || yi >= 7 || xj < 0 || xj >= 6) continue;
                s += w[((o * 2 + c) * 3 + ki) * 3 + kj] * x.at(c, yi, xj);
              }
          CHECK(y.at(o, i, j) == doctest::Approx(s).epsilon(1e-12));
        }
  }

  TEST_CASE("encoder stage sizes follow strides 4, 8, 16") {
    nn::ParamStore store;
    nn::Initializer init(7);
    Encoder enc(store, init, "enc", camera_encoder_config());
    std::mt19937_64 rng(8);
    nn::Context ctx(store, false, 0, false);
    const auto stages = enc(ctx, ag::constant(random_tensor({3, 64, 64}, rng)));
    REQUIRE(stages.size() == 3);
    CHECK(stages[0].shape() == Shape{16, 16, 16});
    CHECK(stages[1].shape() == Shape{24, 8, 8});
    CHECK(stages[2].shape() == Shape{32, 4, 4});
    CHECK_THROWS_AS(enc(ctx, ag::constant(Tensor({3, 4, 64}))), ShapeError);
  }

  TEST_CASE("zero encoder weights give zero stages") {
    nn::ParamStore store;
    nn::Initializer init(9);
    Encoder enc(store, init, "enc", radar_encoder_config());
    zero_with_prefix(store, "enc");
    std::mt19937_64 rng(10);
    nn::Context ctx(store, false, 0, false);
    for (const auto& s : enc(ctx, ag::constant(random_tensor({3, 32, 16}, rng))))
      for (double v : s.value().values()) CHECK(v == 0.0);
  }

  TEST_CASE("neck with zero lower laterals carries only the upsampled top level") {
    nn::ParamStore store;
    nn::Initializer init(11);
    StreamBackbone bb(store, init, SourceId::camera, camera_encoder_config(), 8);
    zero_with_prefix(store, "camera.neck.lateral_raw");
    zero_with_prefix(store, "camera.neck.lateral_s4");
    zero_with_prefix(store, "camera.neck.lateral_s8");
    std::mt19937_64 rng(12);
    nn::Context ctx(store, false, 0, false);
    const FeaturePyramid p = bb(ctx, ag::constant(random_tensor({3, 32, 48}, rng)));
    REQUIRE(p.levels.size() == 4);
    const Tensor& top = p.levels[0].value();
    CHECK(top.shape() == Shape{8, 2, 3});
    CHECK(p.levels[3].shape() == Shape{8, 32, 48});
    for (std::size_t l = 1; l < 4; ++l) {
      const Tensor& lv = p.levels[l].value();
      const int h = lv.dim(1), w = lv.dim(2);
      for (int c = 0; c < 8; ++c)
        for (int i = 0; i < h; ++i)
          for (int j = 0; j < w; ++j) CHECK(lv.at(c, i, j) == top.at(c, i * 2 / h, j * 3 / w));
    }
  }

  TEST_CASE("radar backbone takes six channels and returns four levels") {
    nn::ParamStore store;
    nn::Initializer init(13);
    StreamBackbone bb(store, init, SourceId::radar_ra, radar_encoder_config(), 16);
    std::mt19937_64 rng(14);
    nn::Context ctx(store, false, 0, false);
    const FeaturePyramid p = bb(ctx, ag::constant(random_tensor({6, 58, 32}, rng)));
    REQUIRE(p.levels.size() == 4);
    CHECK(p.levels[0].shape() == Shape{16, 4, 2});
    CHECK(p.levels[3].shape() == Shape{16, 58, 32});
    CHECK(p.source == SourceId::radar_ra);
  }

  TEST_CASE("larger encoder has more parameters") {
    nn::ParamStore small, large;
    nn::Initializer i1(1), i2(1);
    EncoderConfig big = camera_encoder_config();
    big.stage_channels = {32, 48, 64};
    StreamBackbone a(small, i1, SourceId::camera, camera_encoder_config(), 16);
    StreamBackbone b(large, i2, SourceId::camera, big, 16);
    CHECK(large.numel() > small.numel());
  }

  TEST_CASE("source names round trip") {
    for (SourceId s : {SourceId::camera, SourceId::radar_ra, SourceId::radar_ae}) CHECK(parse_source(to_string(s)) == s);
    CHECK_THROWS(parse_source("lidar"));
  }
}
