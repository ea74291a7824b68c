#pragma once

// Small, fully random setups shared by the unit tests and the acceptance run.

#include <random>
#include <vector>

#include "dpft/detection.hpp"
#include "dpft/fusion.hpp"
#include "dpft/synthetic.hpp"
#include "dpft/training.hpp"
#include "oracles.hpp"

namespace fixture {

using namespace dpft;

// Fusion block + detection head + set loss at toy dimensions, with every
// parameter randomised so no gradient path is trivially zero.
struct TinyComposite {
  nn::ParamStore store;
  FusionBlock fusion;
  DetectionHead head;
  Tensor features;   // [N, D]
  Tensor positions;  // [N, 3]
  std::vector<std::vector<Tensor>> pyramids;  // per sensor, coarse-to-fine [D, h, w]
  std::vector<ReferencePoints> refs;
  std::vector<Box3D> gts;
  LossConfig loss_config;

  explicit TinyComposite(std::uint64_t seed, int queries = 5, int dim = 8) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    nn::Initializer init(seed + 1);
    FusionConfig fc;
    fc.dim = dim;
    fc.heads = 2;
    fc.points = 2;
    fc.levels = 2;
    fc.ffn_hidden = 2 * dim;
    fc.dropout = 0.0;
    fusion = FusionBlock(store, init, fc);
    head = DetectionHead(store, init, dim, 2);
    for (auto& t : store.values())
      for (auto& v : t.values()) v += 0.2 * gauss(rng);

    features = Tensor({queries, dim});
    for (auto& v : features.values()) v = unit(rng);
    positions = Tensor({queries, 3});
    for (int q = 0; q < queries; ++q) {
      positions.at(q, 0) = 8.0 + 50.0 * unit(rng);
      positions.at(q, 1) = -0.6 + 1.2 * unit(rng);
    }
    for (std::size_t s = 0; s < fc.sensors.size(); ++s) {
      std::vector<Tensor> levels;
      for (auto [h, w] : {std::pair{3, 4}, std::pair{6, 8}}) {
        Tensor t({dim, h, w});
        for (auto& v : t.values()) v = gauss(rng);
        levels.push_back(std::move(t));
      }
      pyramids.push_back(std::move(levels));
      ReferencePoints r;
      for (int q = 0; q < queries; ++q) {
        r.normalized.push_back({0.1 + 0.8 * unit(rng), 0.1 + 0.8 * unit(rng)});
        r.valid.push_back(q != static_cast<int>(s) ? 1 : 0);
      }
      refs.push_back(std::move(r));
    }
    for (int j = 0; j < 2; ++j) {
      const auto polar = std::array<double, 3>{positions.at(j, 0) + 1.5, positions.at(j, 1), 0.0};
      Box3D b;
      b.center = to_cartesian(polar);
      b.center[2] = 0.4;
      b.size = {4.2 + j * 6.0, 1.8 + j * 0.7, 1.5 + j * 1.5};
      b.heading = -1.0 + 2.0 * unit(rng);
      b.class_id = j;
      gts.push_back(b);
    }
  }

  // Total loss; fills `grads` when given.
  double loss(std::vector<Tensor>* grads = nullptr) {
    nn::Context ctx(store, false, 0, grads != nullptr);
    std::vector<SensorInput> sensors;
    for (std::size_t s = 0; s < pyramids.size(); ++s) {
      FeaturePyramid pyr;
      for (const auto& t : pyramids[s]) pyr.levels.push_back(ag::constant(t));
      pyr.channels = features.dim(1);
      SensorInput in;
      in.source = fusion.config().sensors[s];
      in.values = fusion.cross(s).project_values(ctx, pyr);
      in.refs = refs[s];
      sensors.push_back(std::move(in));
    }
    const ag::Var fused = fusion(ctx, ag::constant(features), positions, sensors);
    const ag::Var raw = head(ctx, fused);
    const SampleLoss sl = compute_loss({CycleOutput{raw, positions}}, gts, 2, loss_config);
    if (grads) {
      ag::backward(sl.total);
      *grads = ctx.gradients();
    }
    return sl.total.value()[0];
  }
};

// One random tiny deformable-attention case checked against the naive
// oracle; returns the largest relative deviation over the output.
inline double deformable_attention_case(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count(1, 4), extent(1, 6);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = count(rng);
  const int dim = 4;
  nn::ParamStore store;
  nn::Initializer init(seed ^ 0x5eedull);
  DeformableAttention attn(store, init, "attn", {dim, 2, 2, 2});
  for (auto& t : store.values())
    for (auto& v : t.values()) v = gauss(rng);

  Tensor queries({n, dim});
  for (auto& v : queries.values()) v = gauss(rng);
  std::vector<Tensor> pyramid;
  for (int l = 0; l < 2; ++l) {
    Tensor t({dim, extent(rng), extent(rng)});
    for (auto& v : t.values()) v = gauss(rng);
    pyramid.push_back(std::move(t));
  }
  ReferencePoints refs;
  for (int q = 0; q < n; ++q) {
    refs.normalized.push_back({unit(rng), unit(rng)});
    refs.valid.push_back(unit(rng) < 0.85 ? 1 : 0);
  }

  nn::Context ctx(store, false, 0, false);
  FeaturePyramid pyr;
  for (const auto& t : pyramid) pyr.levels.push_back(ag::constant(t));
  const Tensor got = attn(ctx, ag::constant(queries), attn.project_values(ctx, pyr), refs).value();
  const Tensor want = oracle::deformable_attention(attn, store, queries, pyramid, refs);
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i)
    worst = std::max(worst, std::abs(got[i] - want[i]) / std::max(std::abs(want[i]), 1e-6));
  return worst;
}

}  // namespace fixture
