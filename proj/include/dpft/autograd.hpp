#pragma once

// Minimal tape-free reverse-mode automatic differentiation.
//
// Every op returns a Var that owns its value and, when any input requires a
// gradient, a closure that scatters the output gradient into its inputs.
// Graphs are built per forward pass and never shared between threads, so a
// batch can be differentiated sample-by-sample in parallel.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "dpft/tensor.hpp"

namespace dpft::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  // Gradient accumulated by backward(); empty when nothing flowed here.
  const Tensor& grad() const { return node_->grad; }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad = true);

using BackwardFn = std::function<void(Node&)>;
Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward);

// Seeds d(root)/d(root) = seed (root must be a scalar) and propagates.
void backward(const Var& root, double seed = 1.0);

// ---- elementwise ----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_constant(const Var& a, const Tensor& c);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var sum(const Var& a);

// ---- shape ----------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
// Columns [start, start+len) of a rank-2 [N, D] tensor.
Var slice_cols(const Var& a, int start, int len);
Var concat_cols(const std::vector<Var>& parts);

// ---- dense ----------------------------------------------------------------
// x [N, in], weight [out, in], bias [out] -> [N, out]
Var linear(const Var& x, const Var& weight, const Var& bias);
// a [M, K] * b [K, N]
Var matmul(const Var& a, const Var& b);
// a [M, K] * b^T where b is [N, K]
Var matmul_nt(const Var& a, const Var& b);
// Softmax along the last axis.
Var softmax_last(const Var& a);
// Row-wise layer normalisation of [N, D] with affine gamma/beta [D].
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Inverted dropout; identity when !training or p == 0.
Var dropout(const Var& x, double p, bool training, std::mt19937_64& rng);

// ---- spatial (single sample, [C, H, W]) ----------------------------------
// weight [O, C, k, k], bias [O]
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var avg_pool2d(const Var& x, int factor);
Var upsample_nearest(const Var& x, int out_h, int out_w);

// Elementwise maximum over several [N, D] candidates. Row n of candidate s
// only participates where masks[s][n] != 0; rows with no valid candidate take
// the fallback row. Ties go to the earliest candidate.
Var masked_max(const std::vector<Var>& candidates,
               const std::vector<std::vector<std::uint8_t>>& masks, const Var& fallback);

// Multi-scale deformable sampling core.
//   values:    per level [D, H_l, W_l]
//   locations: [N, heads, levels, points, 2] as (x=col, y=row) in level pixels
//   weights:   [N, heads, levels * points]
//   valid:     per query; invalid queries produce a zero row
// Output [N, D]: head h fills channels [h*D/heads, (h+1)*D/heads).
// Sampling is bilinear with zero padding outside the map.
Var deform_attn_core(const std::vector<Var>& values, const Var& locations, const Var& weights,
                     const std::vector<std::uint8_t>& valid);

// Bilinear sample of one channel plane with zero padding (shared with tests).
double bilinear_zero_pad(const double* plane, int height, int width, double x, double y);

}  // namespace dpft::ag
