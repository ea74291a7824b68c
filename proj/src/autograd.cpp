#include "dpft/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace dpft::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_mat(const Tensor& t, int rows, int cols) { return {t.data(), rows, cols}; }
MatMap as_mat(Tensor& t, int rows, int cols) { return {t.data(), rows, cols}; }

bool needs(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }
Tensor& grad_of(Node& self, std::size_t i) { return self.inputs[i]->grad_buffer(); }

int last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

void expect_rank(const Var& v, int rank, const char* what) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(v.shape()));
  }
}

void same_size(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// im2col for a [C, H, W] input; output [C*k*k, Ho*Wo].
void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
            double* cols) {
  const int p = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + static_cast<std::size_t>((ci * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo,
            double* dx) {
  const int p = ho * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + static_cast<std::size_t>((ci * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          double* dst = dx + (static_cast<std::size_t>(ci) * h + iy) * w;
          const double* src = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct Corners {
  int x0, y0;
  double wx, wy;
};

Corners corners(double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  return {static_cast<int>(fx), static_cast<int>(fy), x - fx, y - fy};
}

inline double pix(const double* plane, int h, int w, int x, int y) {
  return (x >= 0 && x < w && y >= 0 && y < h) ? plane[static_cast<std::size_t>(y) * w + x] : 0.0;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Var& v) { return v.requires_grad(); });
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) node->inputs.push_back(v.ptr());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void backward(const Var& root, double seed) {
  if (!root.requires_grad()) return;
  if (root.value().size() != 1) throw ShapeError("backward: root must be a scalar");

  // Iterative post-order DFS yields a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  same_size(a, b, "add");
  Tensor out = a.value();
  out.add_(b.value());
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (needs(self, i)) grad_of(self, i).add_(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  same_size(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (needs(self, 0)) grad_of(self, 0).add_(self.grad);
    if (needs(self, 1)) {
      Tensor& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  same_size(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (needs(self, 0)) {
      Tensor& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (needs(self, 1)) {
      Tensor& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out.scale_(s);
  return make_op(std::move(out), {a}, [s](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_constant(const Var& a, const Tensor& c) {
  if (a.value().size() != c.size()) {
    throw ShapeError("add_constant: " + shape_str(a.shape()) + " vs " + shape_str(c.shape()));
  }
  Tensor out = a.value();
  out.add_(c);
  return make_op(std::move(out), {a}, [](Node& self) { grad_of(self, 0).add_(self.grad); });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), {a}, [](Node& self) {
    Tensor& g = grad_of(self, 0);
    const Tensor& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) g[i] += self.grad[i];
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return make_op(std::move(out), {a}, [](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::tanh(v);
  return make_op(std::move(out), {a}, [](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = self.value[i];
      g[i] += self.grad[i] * (1.0 - t * t);
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make_op(Tensor({1}, std::vector<double>{s}), {a}, [](Node& self) {
    Tensor& g = grad_of(self, 0);
    const double up = self.grad[0];
    for (double& v : g.values()) v += up;
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [](Node& self) { grad_of(self, 0).add_(self.grad); });
}

Var slice_cols(const Var& a, int start, int len) {
  expect_rank(a, 2, "slice_cols");
  const int n = a.dim(0);
  const int d = a.dim(1);
  if (start < 0 || len < 0 || start + len > d) throw ShapeError("slice_cols: range out of bounds");
  Tensor out({n, len});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = a.value().at(i, start + j);
  return make_op(std::move(out), {a}, [start, len, n](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < len; ++j) g.at(i, start + j) += self.grad.at(i, j);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int n = parts[0].dim(0);
  int total = 0;
  for (const auto& p : parts) {
    expect_rank(p, 2, "concat_cols");
    if (p.dim(0) != n) throw ShapeError("concat_cols: row mismatch");
    total += p.dim(1);
  }
  Tensor out({n, total});
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int w = p.dim(1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j) out.at(i, off + j) = p.value().at(i, j);
    off += w;
  }
  return make_op(std::move(out), parts, [offsets, n](Node& self) {
    for (std::size_t s = 0; s < self.inputs.size(); ++s) {
      if (!needs(self, s)) continue;
      Tensor& g = grad_of(self, s);
      const int w = g.dim(1);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) g.at(i, j) += self.grad.at(i, offsets[s] + j);
    }
  });
}

// ---------------------------------------------------------------------------

Var linear(const Var& x, const Var& weight, const Var& bias) {
  expect_rank(x, 2, "linear.x");
  expect_rank(weight, 2, "linear.weight");
  const int n = x.dim(0);
  const int in = x.dim(1);
  const int out_dim = weight.dim(0);
  if (weight.dim(1) != in || bias.value().size() != static_cast<std::size_t>(out_dim)) {
    throw ShapeError("linear: x " + shape_str(x.shape()) + ", weight " +
                     shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  }
  Tensor out({n, out_dim});
  auto o = as_mat(out, n, out_dim);
  o.noalias() = as_mat(x.value(), n, in) * as_mat(weight.value(), out_dim, in).transpose();
  const double* b = bias.value().data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_dim; ++j) o(i, j) += b[j];
  return make_op(std::move(out), {x, weight, bias}, [n, in, out_dim](Node& self) {
    auto g = as_mat(self.grad, n, out_dim);
    if (needs(self, 0)) {
      as_mat(grad_of(self, 0), n, in).noalias() +=
          g * as_mat(self.inputs[1]->value, out_dim, in);
    }
    if (needs(self, 1)) {
      as_mat(grad_of(self, 1), out_dim, in).noalias() +=
          g.transpose() * as_mat(self.inputs[0]->value, n, in);
    }
    if (needs(self, 2)) {
      Tensor& gb = grad_of(self, 2);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_dim; ++j) gb[j] += g(i, j);
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  expect_rank(a, 2, "matmul.a");
  expect_rank(b, 2, "matmul.b");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: inner dims differ");
  Tensor out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a.value(), m, k) * as_mat(b.value(), k, n);
  return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
    auto g = as_mat(self.grad, m, n);
    if (needs(self, 0))
      as_mat(grad_of(self, 0), m, k).noalias() +=
          g * as_mat(self.inputs[1]->value, k, n).transpose();
    if (needs(self, 1))
      as_mat(grad_of(self, 1), k, n).noalias() +=
          as_mat(self.inputs[0]->value, m, k).transpose() * g;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  expect_rank(a, 2, "matmul_nt.a");
  expect_rank(b, 2, "matmul_nt.b");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) throw ShapeError("matmul_nt: inner dims differ");
  Tensor out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a.value(), m, k) * as_mat(b.value(), n, k).transpose();
  return make_op(std::move(out), {a, b}, [m, k, n](Node& self) {
    auto g = as_mat(self.grad, m, n);
    if (needs(self, 0))
      as_mat(grad_of(self, 0), m, k).noalias() += g * as_mat(self.inputs[1]->value, n, k);
    if (needs(self, 1))
      as_mat(grad_of(self, 1), n, k).noalias() +=
          g.transpose() * as_mat(self.inputs[0]->value, m, k);
  });
}

Var softmax_last(const Var& a) {
  const int d = last_dim(a.value());
  const int rows = static_cast<int>(a.value().size() / d);
  Tensor out = a.value();
  for (int r = 0; r < rows; ++r) {
    double* row = out.data() + static_cast<std::size_t>(r) * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (int j = 0; j < d; ++j) row[j] /= z;
  }
  return make_op(std::move(out), {a}, [rows, d](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (int r = 0; r < rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += self.grad[base + j] * self.value[base + j];
      for (int j = 0; j < d; ++j)
        g[base + j] += self.value[base + j] * (self.grad[base + j] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  expect_rank(x, 2, "layer_norm");
  const int n = x.dim(0), d = x.dim(1);
  if (gamma.value().size() != static_cast<std::size_t>(d) ||
      beta.value().size() != static_cast<std::size_t>(d)) {
    throw ShapeError("layer_norm: affine size mismatch");
  }
  Tensor out({n, d});
  Tensor xhat({n, d});
  std::vector<double> inv_std(n);
  for (int i = 0; i < n; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += x.value().at(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = x.value().at(i, j) - mean;
      var += c * c;
    }
    var /= d;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) {
      xhat.at(i, j) = (x.value().at(i, j) - mean) * inv_std[i];
      out.at(i, j) = xhat.at(i, j) * gamma.value()[j] + beta.value()[j];
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   const Tensor& gm = self.inputs[1]->value;
                   if (needs(self, 1) || needs(self, 2)) {
                     for (int i = 0; i < n; ++i) {
                       for (int j = 0; j < d; ++j) {
                         if (needs(self, 1))
                           grad_of(self, 1)[j] += self.grad.at(i, j) * xhat.at(i, j);
                         if (needs(self, 2)) grad_of(self, 2)[j] += self.grad.at(i, j);
                       }
                     }
                   }
                   if (!needs(self, 0)) return;
                   Tensor& gx = grad_of(self, 0);
                   for (int i = 0; i < n; ++i) {
                     double mean_g = 0.0, mean_gx = 0.0;
                     for (int j = 0; j < d; ++j) {
                       const double gh = self.grad.at(i, j) * gm[j];
                       mean_g += gh;
                       mean_gx += gh * xhat.at(i, j);
                     }
                     mean_g /= d;
                     mean_gx /= d;
                     for (int j = 0; j < d; ++j) {
                       const double gh = self.grad.at(i, j) * gm[j];
                       gx.at(i, j) += inv_std[i] * (gh - mean_g - xhat.at(i, j) * mean_gx);
                     }
                   }
                 });
}

Var dropout(const Var& x, double p, bool training, std::mt19937_64& rng) {
  if (!training || p <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(x.shape());
  const double s = 1.0 / (1.0 - p);
  for (double& m : mask.values()) m = keep(rng) ? s : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_op(std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  expect_rank(x, 3, "conv2d.x");
  expect_rank(weight, 4, "conv2d.weight");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int o = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != c || weight.dim(3) != k) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " for input " +
                     shape_str(x.shape()));
  }
  if (bias.value().size() != static_cast<std::size_t>(o)) throw ShapeError("conv2d: bias size");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input too small " + shape_str(x.shape()));
  const int ckk = c * k * k;
  const int p = ho * wo;

  // 1x1 stride-1 convolutions skip im2col entirely.
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  Tensor cols;
  if (!pointwise) {
    cols = Tensor({ckk, p});
    im2col(x.value().data(), c, h, w, k, stride, pad, ho, wo, cols.data());
  }
  const Tensor& colref = pointwise ? x.value() : cols;

  Tensor out({o, ho, wo});
  auto om = as_mat(out, o, p);
  om.noalias() = as_mat(weight.value(), o, ckk) * as_mat(colref, ckk, p);
  for (int oc = 0; oc < o; ++oc) om.row(oc).array() += bias.value()[oc];

  return make_op(
      std::move(out), {x, weight, bias},
      [=, cols = std::move(cols)](Node& self) {
        auto g = as_mat(self.grad, o, p);
        const Tensor& colv = pointwise ? self.inputs[0]->value : cols;
        if (needs(self, 1))
          as_mat(grad_of(self, 1), o, ckk).noalias() += g * as_mat(colv, ckk, p).transpose();
        if (needs(self, 2)) {
          Tensor& gb = grad_of(self, 2);
          for (int oc = 0; oc < o; ++oc) gb[oc] += g.row(oc).sum();
        }
        if (needs(self, 0)) {
          if (pointwise) {
            as_mat(grad_of(self, 0), c, p).noalias() +=
                as_mat(self.inputs[1]->value, o, ckk).transpose() * g;
          } else {
            Tensor dcols({ckk, p});
            as_mat(dcols, ckk, p).noalias() =
                as_mat(self.inputs[1]->value, o, ckk).transpose() * g;
            col2im(dcols.data(), c, h, w, k, stride, pad, ho, wo, grad_of(self, 0).data());
          }
        }
      });
}

Var avg_pool2d(const Var& x, int factor) {
  expect_rank(x, 3, "avg_pool2d");
  if (factor <= 1) return x;
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = std::max(1, h / factor), wo = std::max(1, w / factor);
  // Windows cover [oy*factor, min(h, (oy+1)*factor)), the last one absorbs the remainder.
  auto y_end = [=](int oy) { return oy == ho - 1 ? h : (oy + 1) * factor; };
  auto x_end = [=](int ox) { return ox == wo - 1 ? w : (ox + 1) * factor; };
  Tensor out({c, ho, wo});
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        int cnt = 0;
        for (int iy = oy * factor; iy < y_end(oy); ++iy)
          for (int ix = ox * factor; ix < x_end(ox); ++ix, ++cnt) s += x.value().at(ci, iy, ix);
        out.at(ci, oy, ox) = s / cnt;
      }
  return make_op(std::move(out), {x}, [=](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (int ci = 0; ci < c; ++ci)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const int cnt = (y_end(oy) - oy * factor) * (x_end(ox) - ox * factor);
          const double up = self.grad.at(ci, oy, ox) / cnt;
          for (int iy = oy * factor; iy < y_end(oy); ++iy)
            for (int ix = ox * factor; ix < x_end(ox); ++ix) g.at(ci, iy, ix) += up;
        }
  });
}

Var upsample_nearest(const Var& x, int out_h, int out_w) {
  expect_rank(x, 3, "upsample_nearest");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<int> sy(out_h), sx(out_w);
  for (int i = 0; i < out_h; ++i) sy[i] = std::min(h - 1, static_cast<int>(std::floor((i + 0.5) * h / out_h)));
  for (int j = 0; j < out_w; ++j) sx[j] = std::min(w - 1, static_cast<int>(std::floor((j + 0.5) * w / out_w)));
  Tensor out({c, out_h, out_w});
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) out.at(ci, i, j) = x.value().at(ci, sy[i], sx[j]);
  return make_op(std::move(out), {x}, [=](Node& self) {
    Tensor& g = grad_of(self, 0);
    for (int ci = 0; ci < c; ++ci)
      for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j) g.at(ci, sy[i], sx[j]) += self.grad.at(ci, i, j);
  });
}

Var masked_max(const std::vector<Var>& candidates,
               const std::vector<std::vector<std::uint8_t>>& masks, const Var& fallback) {
  if (candidates.empty() || candidates.size() != masks.size())
    throw ShapeError("masked_max: candidates/masks mismatch");
  const int n = fallback.dim(0), d = fallback.dim(1);
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    same_size(candidates[s], fallback, "masked_max");
    if (masks[s].size() != static_cast<std::size_t>(n)) throw ShapeError("masked_max: mask size");
  }
  const int fb = static_cast<int>(candidates.size());
  Tensor out({n, d});
  std::vector<int> source(static_cast<std::size_t>(n) * d, fb);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = fb;
      for (int s = 0; s < fb; ++s) {
        if (!masks[s][i]) continue;
        const double v = candidates[s].value().at(i, j);
        if (v > best) {
          best = v;
          arg = s;
        }
      }
      out.at(i, j) = arg == fb ? fallback.value().at(i, j) : best;
      source[static_cast<std::size_t>(i) * d + j] = arg;
    }
  }
  std::vector<Var> inputs = candidates;
  inputs.push_back(fallback);
  return make_op(std::move(out), inputs, [source = std::move(source), n, d](Node& self) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        const std::size_t idx = static_cast<std::size_t>(i) * d + j;
        const auto s = static_cast<std::size_t>(source[idx]);
        if (needs(self, s)) grad_of(self, s)[idx] += self.grad[idx];
      }
  });
}

// ---------------------------------------------------------------------------

double bilinear_zero_pad(const double* plane, int height, int width, double x, double y) {
  const Corners cr = corners(x, y);
  const double v00 = pix(plane, height, width, cr.x0, cr.y0);
  const double v10 = pix(plane, height, width, cr.x0 + 1, cr.y0);
  const double v01 = pix(plane, height, width, cr.x0, cr.y0 + 1);
  const double v11 = pix(plane, height, width, cr.x0 + 1, cr.y0 + 1);
  return (1 - cr.wy) * ((1 - cr.wx) * v00 + cr.wx * v10) + cr.wy * ((1 - cr.wx) * v01 + cr.wx * v11);
}

Var deform_attn_core(const std::vector<Var>& values, const Var& locations, const Var& weights,
                     const std::vector<std::uint8_t>& valid) {
  expect_rank(locations, 5, "deform_attn_core.locations");
  expect_rank(weights, 3, "deform_attn_core.weights");
  const int n = locations.dim(0), heads = locations.dim(1), levels = locations.dim(2),
            points = locations.dim(3);
  if (locations.dim(4) != 2) throw ShapeError("deform_attn_core: locations last dim must be 2");
  if (static_cast<int>(values.size()) != levels)
    throw ShapeError("deform_attn_core: level count mismatch");
  if (weights.dim(0) != n || weights.dim(1) != heads || weights.dim(2) != levels * points)
    throw ShapeError("deform_attn_core: weights shape " + shape_str(weights.shape()));
  if (valid.size() != static_cast<std::size_t>(n)) throw ShapeError("deform_attn_core: mask size");
  const int d = values[0].dim(0);
  if (d % heads != 0) throw ShapeError("deform_attn_core: channels not divisible by heads");
  for (const auto& v : values) {
    expect_rank(v, 3, "deform_attn_core.value");
    if (v.dim(0) != d) throw ShapeError("deform_attn_core: channel mismatch across levels");
  }
  const int dh = d / heads;

  Tensor out({n, d});
  const Tensor& loc = locations.value();
  const Tensor& wt = weights.value();
  for (int q = 0; q < n; ++q) {
    if (!valid[q]) continue;
    for (int h = 0; h < heads; ++h) {
      for (int l = 0; l < levels; ++l) {
        const Tensor& val = values[l].value();
        const int hl = val.dim(1), wl = val.dim(2);
        const std::size_t plane = static_cast<std::size_t>(hl) * wl;
        for (int k = 0; k < points; ++k) {
          const std::size_t li = ((((static_cast<std::size_t>(q) * heads + h) * levels + l) * points + k) * 2);
          const double a = wt.at(q, h, l * points + k);
          for (int c = 0; c < dh; ++c) {
            const int ch = h * dh + c;
            out.at(q, ch) += a * bilinear_zero_pad(val.data() + ch * plane, hl, wl, loc[li], loc[li + 1]);
          }
        }
      }
    }
  }

  std::vector<Var> inputs = values;
  inputs.push_back(locations);
  inputs.push_back(weights);
  return make_op(std::move(out), inputs, [=](Node& self) {
    const std::size_t li_idx = static_cast<std::size_t>(levels);
    const std::size_t wi_idx = li_idx + 1;
    const Tensor& loc_v = self.inputs[li_idx]->value;
    const Tensor& wt_v = self.inputs[wi_idx]->value;
    Tensor* gloc = needs(self, li_idx) ? &grad_of(self, li_idx) : nullptr;
    Tensor* gwt = needs(self, wi_idx) ? &grad_of(self, wi_idx) : nullptr;
    for (int q = 0; q < n; ++q) {
      if (!valid[q]) continue;
      for (int h = 0; h < heads; ++h) {
        for (int l = 0; l < levels; ++l) {
          const Tensor& val = self.inputs[l]->value;
          Tensor* gval = needs(self, l) ? &grad_of(self, l) : nullptr;
          const int hl = val.dim(1), wl = val.dim(2);
          const std::size_t plane = static_cast<std::size_t>(hl) * wl;
          for (int k = 0; k < points; ++k) {
            const std::size_t li = ((((static_cast<std::size_t>(q) * heads + h) * levels + l) * points + k) * 2);
            const double x = loc_v[li], y = loc_v[li + 1];
            const Corners cr = corners(x, y);
            const double a = wt_v.at(q, h, l * points + k);
            const bool in00 = cr.x0 >= 0 && cr.x0 < wl && cr.y0 >= 0 && cr.y0 < hl;
            const bool in10 = cr.x0 + 1 >= 0 && cr.x0 + 1 < wl && cr.y0 >= 0 && cr.y0 < hl;
            const bool in01 = cr.x0 >= 0 && cr.x0 < wl && cr.y0 + 1 >= 0 && cr.y0 + 1 < hl;
            const bool in11 = cr.x0 + 1 >= 0 && cr.x0 + 1 < wl && cr.y0 + 1 >= 0 && cr.y0 + 1 < hl;
            const std::size_t i00 = static_cast<std::size_t>(cr.y0) * wl + cr.x0;
            double ga = 0.0, gx = 0.0, gy = 0.0;
            for (int c = 0; c < dh; ++c) {
              const int ch = h * dh + c;
              const double go = self.grad.at(q, ch);
              if (go == 0.0) continue;
              const double* p = val.data() + ch * plane;
              const double v00 = in00 ? p[i00] : 0.0;
              const double v10 = in10 ? p[i00 + 1] : 0.0;
              const double v01 = in01 ? p[i00 + wl] : 0.0;
              const double v11 = in11 ? p[i00 + wl + 1] : 0.0;
              const double s = (1 - cr.wy) * ((1 - cr.wx) * v00 + cr.wx * v10) +
                               cr.wy * ((1 - cr.wx) * v01 + cr.wx * v11);
              ga += go * s;
              gx += go * a * ((1 - cr.wy) * (v10 - v00) + cr.wy * (v11 - v01));
              gy += go * a * ((1 - cr.wx) * (v01 - v00) + cr.wx * (v11 - v10));
              if (gval) {
                double* gp = gval->data() + ch * plane;
                const double ag = a * go;
                if (in00) gp[i00] += ag * (1 - cr.wx) * (1 - cr.wy);
                if (in10) gp[i00 + 1] += ag * cr.wx * (1 - cr.wy);
                if (in01) gp[i00 + wl] += ag * (1 - cr.wx) * cr.wy;
                if (in11) gp[i00 + wl + 1] += ag * cr.wx * cr.wy;
              }
            }
            if (gwt) gwt->at(q, h, l * points + k) += ga;
            if (gloc) {
              (*gloc)[li] += gx;
              (*gloc)[li + 1] += gy;
            }
          }
        }
      }
    }
  });
}

}  // namespace dpft::ag
