#include "dpft/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dpft::nn {

ParamId ParamStore::add(std::string name, Tensor init) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return static_cast<ParamId>(values_.size() - 1);
}

std::optional<ParamId> ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<ParamId>(i);
  return std::nullopt;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::size_t ParamStore::numel_with_prefix(const std::string& prefix) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i].rfind(prefix, 0) == 0) n += values_[i].size();
  return n;
}

Context::Context(const ParamStore& store, bool training, std::uint64_t seed, bool track_grads)
    : store_(&store),
      training_(training),
      track_grads_(track_grads),
      rng_(seed),
      bound_(static_cast<std::size_t>(store.count())) {}

ag::Var Context::param(ParamId id) {
  auto& slot = bound_.at(static_cast<std::size_t>(id));
  if (!slot.defined()) slot = ag::leaf(store_->value(id), track_grads_);
  return slot;
}

std::vector<Tensor> Context::gradients() const {
  std::vector<Tensor> out;
  out.reserve(bound_.size());
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    const auto& v = bound_[i];
    if (v.defined() && !v.grad().empty()) {
      out.push_back(v.grad());
    } else {
      out.emplace_back(store_->value(static_cast<ParamId>(i)).shape());
    }
  }
  return out;
}

Tensor Initializer::uniform(Shape shape, double bound) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng_);
  return t;
}

Tensor Initializer::xavier(Shape shape, int fan_in, int fan_out) {
  return uniform(std::move(shape), std::sqrt(6.0 / (fan_in + fan_out)));
}

Linear Linear::create(ParamStore& store, Initializer& init, const std::string& name, int in,
                      int out) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add(name + ".weight", init.xavier({out, in}, in, out));
  l.bias = store.add(name + ".bias", Tensor({out}));
  return l;
}

ag::Var Linear::operator()(Context& ctx, const ag::Var& x) const {
  return ag::linear(x, ctx.param(weight), ctx.param(bias));
}

Conv2d Conv2d::create(ParamStore& store, Initializer& init, const std::string& name, int in,
                      int out, int kernel, int stride) {
  Conv2d c;
  c.in = in;
  c.out = out;
  c.kernel = kernel;
  c.stride = stride;
  c.pad = kernel / 2;
  // He-uniform for ReLU stacks.
  const int fan_in = in * kernel * kernel;
  c.weight = store.add(name + ".weight",
                       init.uniform({out, in, kernel, kernel}, std::sqrt(6.0 / fan_in)));
  c.bias = store.add(name + ".bias", Tensor({out}));
  return c;
}

ag::Var Conv2d::operator()(Context& ctx, const ag::Var& x) const {
  return ag::conv2d(x, ctx.param(weight), ctx.param(bias), stride, pad);
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, int dim) {
  LayerNorm ln;
  ln.gamma = store.add(name + ".gamma", Tensor({dim}, 1.0));
  ln.beta = store.add(name + ".beta", Tensor({dim}));
  return ln;
}

ag::Var LayerNorm::operator()(Context& ctx, const ag::Var& x) const {
  return ag::layer_norm(x, ctx.param(gamma), ctx.param(beta));
}

}  // namespace dpft::nn
