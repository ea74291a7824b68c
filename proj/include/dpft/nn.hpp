#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dpft/autograd.hpp"

namespace dpft::nn {

using ParamId = int;

// Named, ordered parameter storage. Names are dotted paths; the leading
// component is the checkpoint group ("camera", "radar_ra", "fusion", ...).
class ParamStore {
 public:
  ParamId add(std::string name, Tensor init);

  const Tensor& value(ParamId id) const { return values_.at(id); }
  Tensor& value(ParamId id) { return values_.at(id); }
  const std::string& name(ParamId id) const { return names_.at(id); }
  std::optional<ParamId> find(const std::string& name) const;

  int count() const { return static_cast<int>(values_.size()); }
  std::size_t numel() const;
  std::size_t numel_with_prefix(const std::string& prefix) const;

  std::vector<Tensor>& values() { return values_; }
  const std::vector<Tensor>& values() const { return values_; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

// State of one forward pass: parameter leaves bound on first use, dropout
// randomness, and the train/eval switch.
class Context {
 public:
  Context(const ParamStore& store, bool training, std::uint64_t seed, bool track_grads);

  ag::Var param(ParamId id);
  bool training() const { return training_; }
  std::mt19937_64& rng() { return rng_; }

  // Gradients per parameter after ag::backward(); zero tensors for unused ones.
  std::vector<Tensor> gradients() const;

 private:
  const ParamStore* store_;
  bool training_;
  bool track_grads_;
  std::mt19937_64 rng_;
  std::vector<ag::Var> bound_;
};

// Initialiser randomness is kept separate from any data randomness.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  Tensor uniform(Shape shape, double bound);
  Tensor xavier(Shape shape, int fan_in, int fan_out);
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

struct Linear {
  ParamId weight = -1;
  ParamId bias = -1;
  int in = 0;
  int out = 0;

  static Linear create(ParamStore& store, Initializer& init, const std::string& name, int in,
                       int out);
  ag::Var operator()(Context& ctx, const ag::Var& x) const;
};

struct Conv2d {
  ParamId weight = -1;
  ParamId bias = -1;
  int in = 0;
  int out = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  static Conv2d create(ParamStore& store, Initializer& init, const std::string& name, int in,
                       int out, int kernel, int stride);
  ag::Var operator()(Context& ctx, const ag::Var& x) const;
};

struct LayerNorm {
  ParamId gamma = -1;
  ParamId beta = -1;

  static LayerNorm create(ParamStore& store, const std::string& name, int dim);
  ag::Var operator()(Context& ctx, const ag::Var& x) const;
};

}  // namespace dpft::nn
