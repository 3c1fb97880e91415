#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "evmatch/tensor.hpp"

// Minimal reverse-mode engine over dense double tensors. Forward ops run
// eagerly and record a tape node; backward() walks the recorded DAG in
// reverse topological order. Gradients live in a per-call map, never in
// the nodes, so concurrent backward passes over shared parameters are safe.

namespace evmatch {

// Additive-bias sentinel standing in for -inf pre-softmax. Any logit at or
// below kMaskThreshold is masked: its softmax weight is exactly 0.
inline constexpr double kNegInf = -1e30;
inline constexpr double kMaskThreshold = -1e29;

class BackwardCtx;

struct Node {
  Tensor value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&, BackwardCtx&)> backprop;  // may be empty for leaves
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Tensor value) { return leaf(std::move(value), false); }
  static Var param(Tensor value) { return leaf(std::move(value), true); }

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  Tensor& mutable_value() { return n_->value; }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  const NodePtr& node() const { return n_; }

  const Shape& shape() const { return n_->value.shape(); }
  int64_t rows() const { return n_->value.rows(); }
  int64_t cols() const { return n_->value.cols(); }

 private:
  NodePtr n_;
};

class BackwardCtx {
 public:
  // Accumulation buffer for a node's gradient; zero-initialized on first use.
  Tensor& grad(Node& n) {
    auto it = grads_.find(&n);
    if (it == grads_.end()) it = grads_.emplace(&n, Tensor(n.value.shape())).first;
    return it->second;
  }
  const Tensor* find(const Node* n) const {
    auto it = grads_.find(n);
    return it == grads_.end() ? nullptr : &it->second;
  }
  const Tensor* find(const Var& v) const { return find(v.node().get()); }

  // Gradient of a var, all-zeros if the var was unreachable from the root.
  Tensor grad_or_zero(const Var& v) const {
    const Tensor* g = find(v);
    return g ? *g : Tensor(v.value().shape());
  }

 private:
  std::unordered_map<const Node*, Tensor> grads_;
};

namespace detail {

inline void topo_sort(Node* root, std::vector<Node*>& order) {
  // Iterative post-order DFS, input order fixed -> deterministic.
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* in = node->inputs[next++].get();
      if (in->requires_grad && !visited.count(in)) {
        visited.insert(in);
        stack.emplace_back(in, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

inline Var make_node(const char* op, Tensor value, std::vector<Var> inputs,
                     std::function<void(Node&, BackwardCtx&)> backprop) {
  if (!value.all_finite()) fail(std::string("non-finite output of op '") + op + "'");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  for (auto& v : inputs) {
    needs = needs || v.requires_grad();
    n->inputs.push_back(v.node());
  }
  n->requires_grad = needs;
  if (needs) n->backprop = std::move(backprop);
  return Var(std::move(n));
}

}  // namespace detail

// Reverse-mode pass from a scalar output. Returns the gradient map; inputs
// not reachable from the root are simply absent (treated as zero gradient).
inline BackwardCtx backward(const Var& root) {
  require(root.value().numel() == 1, "backward: output must be scalar, got " + shape_str(root.shape()));
  BackwardCtx ctx;
  if (!root.requires_grad()) return ctx;
  ctx.grad(*root.node())[0] = 1.0;
  std::vector<Node*> order;
  detail::topo_sort(root.node().get(), order);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && ctx.find(n)) n->backprop(*n, ctx);
  }
  return ctx;
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return detail::make_node("add", std::move(out), {a, b}, [](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    for (int k = 0; k < 2; ++k)
      if (n.inputs[k]->requires_grad) {
        Tensor& gi = ctx.grad(*n.inputs[k]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
      }
  });
}

inline Var sub(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "sub: shape mismatch");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return detail::make_node("sub", std::move(out), {a, b}, [](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    if (n.inputs[0]->requires_grad) {
      Tensor& ga = ctx.grad(*n.inputs[0]);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& gb = ctx.grad(*n.inputs[1]);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  require(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return detail::make_node("mul", std::move(out), {a, b}, [](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv2 = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) {
      Tensor& ga = ctx.grad(*n.inputs[0]);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& gb = ctx.grad(*n.inputs[1]);
      for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return detail::make_node("scale", std::move(out), {a}, [s](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    Tensor& ga = ctx.grad(*n.inputs[0]);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return detail::make_node("add_scalar", std::move(out), {a}, [](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    Tensor& ga = ctx.grad(*n.inputs[0]);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

template <typename F, typename DF>
inline Var unary_op(const char* name, const Var& a, F f, DF df) {
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(out[i]);
  return detail::make_node(name, std::move(out), {a}, [df](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    const Tensor& x = n.inputs[0]->value;
    const Tensor& y = n.value;
    Tensor& ga = ctx.grad(*n.inputs[0]);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

inline Var relu(const Var& a) {
  return unary_op("relu", a, [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Var sigmoid(const Var& a) {
  return unary_op("sigmoid", a,
                  [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

inline Var gelu(const Var& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return unary_op("gelu", a,
                  [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
                  [](double x, double) {
                    double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                    return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
                  });
}

inline Var vexp(const Var& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

// log with a floor on the argument; gradient is 0 on the clamped region.
inline Var vlog(const Var& a, double clamp_min = 1e-12) {
  return unary_op("log", a,
                  [clamp_min](double x) { return std::log(std::max(x, clamp_min)); },
                  [clamp_min](double x, double) { return x > clamp_min ? 1.0 / x : 0.0; });
}

inline Var square(const Var& a) {
  return unary_op("square", a, [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; });
}

inline Var reshape(const Var& a, Shape s) {
  Tensor out = a.value().reshaped(std::move(s));
  return detail::make_node("reshape", std::move(out), {a}, [](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    Tensor& ga = ctx.grad(*n.inputs[0]);
    for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
  });
}

inline Var transpose2d(const Var& a) {
  const Tensor& x = a.value();
  Tensor out({x.cols(), x.rows()});
  as_matrix(out) = as_matrix(x).transpose();
  return detail::make_node("transpose", std::move(out), {a}, [](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    Tensor& ga = ctx.grad(*n.inputs[0]);
    as_matrix(ga) += as_matrix(g).transpose();
  });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul_values(a.value(), b.value());
  return detail::make_node("matmul", std::move(out), {a, b}, [](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad) {
      Tensor& ga = ctx.grad(*n.inputs[0]);
      MatMap(ga.data(), av.rows(), av.cols()).noalias() += as_matrix(g) * as_matrix(bv).transpose();
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& gb = ctx.grad(*n.inputs[1]);
      MatMap(gb.data(), bv.rows(), bv.cols()).noalias() += as_matrix(av).transpose() * as_matrix(g);
    }
  });
}

// x [R x C] + b [C], broadcast over rows.
inline Var bias_add(const Var& x, const Var& b) {
  require(b.value().numel() == x.cols(), "bias_add: bias length != cols");
  Tensor out = x.value();
  const Tensor& bv = b.value();
  int64_t rows = out.rows(), cols = out.cols();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return detail::make_node("bias_add", std::move(out), {x, b}, [](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    int64_t rows = g.rows(), cols = g.cols();
    if (n.inputs[0]->requires_grad) {
      Tensor& gx = ctx.grad(*n.inputs[0]);
      for (int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& gb = ctx.grad(*n.inputs[1]);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    }
  });
}

// x [R x K] * W [K x N] + b [N]
inline Var linear(const Var& x, const Var& w, const Var& b) {
  return bias_add(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Softmax (last dim) with optional additive bias and -inf masking
// ---------------------------------------------------------------------------

namespace detail {

// Row softmax over the flattened matrix view, masking entries whose biased
// logit is <= kMaskThreshold. A fully masked row yields an all-zero row
// (downstream attention then degenerates to the residual path).
inline Tensor masked_softmax_values(const Tensor& logits) {
  Tensor out = logits;
  int64_t rows = out.rows(), cols = out.cols();
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < cols; ++c)
      if (row[c] > kMaskThreshold) mx = std::max(mx, row[c]);
    if (!std::isfinite(mx)) {
      std::fill(row, row + cols, 0.0);
      continue;
    }
    double sum = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      row[c] = row[c] > kMaskThreshold ? std::exp(row[c] - mx) : 0.0;
      sum += row[c];
    }
    for (int64_t c = 0; c < cols; ++c) row[c] /= sum;
  }
  return out;
}

inline void softmax_backward_rows(const Tensor& y, const Tensor& g, Tensor& gx) {
  int64_t rows = y.rows(), cols = y.cols();
  for (int64_t r = 0; r < rows; ++r) {
    const double* yr = y.data() + r * cols;
    const double* gr = g.data() + r * cols;
    double dot = 0.0;
    for (int64_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
    double* gxr = gx.data() + r * cols;
    for (int64_t c = 0; c < cols; ++c) gxr[c] += yr[c] * (gr[c] - dot);
  }
}

}  // namespace detail

inline Var softmax_rows(const Var& logits) {
  Tensor out = detail::masked_softmax_values(logits.value());
  return detail::make_node("softmax", std::move(out), {logits}, [](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    Tensor& gx = ctx.grad(*n.inputs[0]);
    detail::softmax_backward_rows(n.value, g, gx);
  });
}

// softmax_rows(logits + bias), bias broadcast per key column ([cols] or
// [1 x cols]) or full-shape. Gradient flows into both logits and bias.
inline Var softmax_rows_biased(const Var& logits, const Var& bias) {
  const Tensor& lv = logits.value();
  const Tensor& bv = bias.value();
  bool broadcast = bv.numel() == lv.cols();
  require(broadcast || bv.same_shape(lv), "softmax bias: expected [cols] or logits shape");
  Tensor biased = lv;
  int64_t rows = lv.rows(), cols = lv.cols();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) biased[r * cols + c] += broadcast ? bv[c] : bv[r * cols + c];
  Tensor out = detail::masked_softmax_values(biased);
  return detail::make_node("softmax_biased", std::move(out), {logits, bias},
                           [broadcast](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    int64_t rows = g.rows(), cols = g.cols();
    Tensor glogits(n.value.shape());
    detail::softmax_backward_rows(n.value, g, glogits);
    if (n.inputs[0]->requires_grad) {
      Tensor& gx = ctx.grad(*n.inputs[0]);
      for (int64_t i = 0; i < glogits.numel(); ++i) gx[i] += glogits[i];
    }
    if (n.inputs[1]->requires_grad) {
      Tensor& gb = ctx.grad(*n.inputs[1]);
      if (broadcast) {
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < cols; ++c) gb[c] += glogits[r * cols + c];
      } else {
        for (int64_t i = 0; i < glogits.numel(); ++i) gb[i] += glogits[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Grouped scaled-dot-product attention (fused)
// ---------------------------------------------------------------------------

// Attention within consecutive row groups: q is [G*gq x dh], k and v are
// [G*gk x dh], and group g's queries attend only to group g's keys. This
// one node covers plain attention (G=1), per-channel spatial attention
// (G=T, gq=gk=S), per-location temporal attention (G=S, gq=gk=T) and
// cross-channel aggregation (G=S, gq=1) without per-group tape overhead.
// key_bias (optional, numel G*gk) is added to the logits of key j for every
// query in its group; entries <= kMaskThreshold mask the key exactly.
// weights_out, when given, receives the [G*gq x gk] softmax weights.
inline Var grouped_sdpa(const Var& q, const Var& k, const Var& v, int64_t gq, int64_t gk,
                        double scale, const Var& key_bias = {}, Tensor* weights_out = nullptr) {
  int64_t dh = q.cols();
  require(k.cols() == dh && v.cols() == dh, "grouped_sdpa: width mismatch");
  require(gq >= 1 && gk >= 1 && q.rows() % gq == 0, "grouped_sdpa: bad group sizes");
  int64_t groups = q.rows() / gq;
  require(k.rows() == groups * gk && v.rows() == groups * gk, "grouped_sdpa: k/v rows mismatch");
  require(!key_bias.defined() || key_bias.value().numel() == groups * gk,
          "grouped_sdpa: key_bias numel mismatch");

  Tensor weights({groups * gq, gk});
  {
    ConstMatMap qm = as_matrix(q.value());
    ConstMatMap km = as_matrix(k.value());
    const double* bias = key_bias.defined() ? key_bias.value().data() : nullptr;
    for (int64_t g = 0; g < groups; ++g) {
      MatMap wg(weights.data() + g * gq * gk, gq, gk);
      wg.noalias() = qm.middleRows(g * gq, gq) * km.middleRows(g * gk, gk).transpose() * scale;
      if (bias)
        for (int64_t i = 0; i < gq; ++i)
          for (int64_t j = 0; j < gk; ++j) wg(i, j) += bias[g * gk + j];
    }
    weights = detail::masked_softmax_values(weights);
  }
  if (weights_out) *weights_out = weights;

  Tensor out({groups * gq, dh});
  {
    ConstMatMap vm = as_matrix(v.value());
    for (int64_t g = 0; g < groups; ++g) {
      ConstMatMap wg(weights.data() + g * gq * gk, gq, gk);
      MatMap(out.data() + g * gq * dh, gq, dh).noalias() = wg * vm.middleRows(g * gk, gk);
    }
  }

  std::vector<Var> inputs = key_bias.defined() ? std::vector<Var>{q, k, v, key_bias}
                                               : std::vector<Var>{q, k, v};
  return detail::make_node(
      "grouped_sdpa", std::move(out), std::move(inputs),
      [weights = std::move(weights), gq, gk, scale](Node& n, BackwardCtx& ctx) {
        const Tensor& g_out = *ctx.find(&n);
        int64_t dh = g_out.cols();
        int64_t groups = g_out.rows() / gq;
        const Tensor& qv = n.inputs[0]->value;
        const Tensor& kv = n.inputs[1]->value;
        const Tensor& vv = n.inputs[2]->value;
        bool need_q = n.inputs[0]->requires_grad;
        bool need_k = n.inputs[1]->requires_grad;
        bool need_v = n.inputs[2]->requires_grad;
        bool need_b = n.inputs.size() > 3 && n.inputs[3]->requires_grad;
        Tensor* gq_t = need_q ? &ctx.grad(*n.inputs[0]) : nullptr;
        Tensor* gk_t = need_k ? &ctx.grad(*n.inputs[1]) : nullptr;
        Tensor* gv_t = need_v ? &ctx.grad(*n.inputs[2]) : nullptr;
        Tensor* gb_t = need_b ? &ctx.grad(*n.inputs[3]) : nullptr;
        EigenRowMat dscores(gq, gk);
        for (int64_t g = 0; g < groups; ++g) {
          ConstMatMap a(weights.data() + g * gq * gk, gq, gk);
          ConstMatMap dout(g_out.data() + g * gq * dh, gq, dh);
          if (need_v)
            MatMap(gv_t->data() + g * gk * dh, gk, dh).noalias() +=
                a.transpose() * dout;
          if (!need_q && !need_k && !need_b) continue;
          EigenRowMat da = dout * ConstMatMap(vv.data() + g * gk * dh, gk, dh).transpose();
          for (int64_t i = 0; i < gq; ++i) {
            double dot = 0.0;
            for (int64_t j = 0; j < gk; ++j) dot += a(i, j) * da(i, j);
            for (int64_t j = 0; j < gk; ++j) dscores(i, j) = a(i, j) * (da(i, j) - dot);
          }
          if (need_q)
            MatMap(gq_t->data() + g * gq * dh, gq, dh).noalias() +=
                dscores * ConstMatMap(kv.data() + g * gk * dh, gk, dh) * scale;
          if (need_k)
            MatMap(gk_t->data() + g * gk * dh, gk, dh).noalias() +=
                dscores.transpose() * ConstMatMap(qv.data() + g * gq * dh, gq, dh) * scale;
          if (need_b)
            for (int64_t j = 0; j < gk; ++j) {
              double s = 0.0;
              for (int64_t i = 0; i < gq; ++i) s += dscores(i, j);
              (*gb_t)[g * gk + j] += s;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Layer norm over the last dimension
// ---------------------------------------------------------------------------

inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6) {
  const Tensor& xv = x.value();
  int64_t rows = xv.rows(), cols = xv.cols();
  require(gamma.value().numel() == cols && beta.value().numel() == cols,
          "layer_norm: gamma/beta length != cols");
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  Tensor inv_sigma({rows});
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * cols;
    double mean = 0.0;
    for (int64_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(cols);
    double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    for (int64_t c = 0; c < cols; ++c) {
      double xh = (xr[c] - mean) * is;
      xhat[r * cols + c] = xh;
      out[r * cols + c] = gv[c] * xh + bv[c];
    }
  }
  return detail::make_node(
      "layer_norm", std::move(out), {x, gamma, beta},
      [xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node& n, BackwardCtx& ctx) {
        const Tensor& g = *ctx.find(&n);
        int64_t rows = g.rows(), cols = g.cols();
        const Tensor& gv = n.inputs[1]->value;
        if (n.inputs[1]->requires_grad) {
          Tensor& gg = ctx.grad(*n.inputs[1]);
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * xhat[r * cols + c];
        }
        if (n.inputs[2]->requires_grad) {
          Tensor& gb = ctx.grad(*n.inputs[2]);
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
        }
        if (n.inputs[0]->requires_grad) {
          Tensor& gx = ctx.grad(*n.inputs[0]);
          for (int64_t r = 0; r < rows; ++r) {
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int64_t c = 0; c < cols; ++c) {
              double dxh = g[r * cols + c] * gv[c];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xhat[r * cols + c];
            }
            mean_dxh /= static_cast<double>(cols);
            mean_dxh_xh /= static_cast<double>(cols);
            for (int64_t c = 0; c < cols; ++c) {
              double dxh = g[r * cols + c] * gv[c];
              gx[r * cols + c] +=
                  inv_sigma[r] * (dxh - mean_dxh - xhat[r * cols + c] * mean_dxh_xh);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions, slicing, gathering, concatenation
// ---------------------------------------------------------------------------

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.value().numel(); ++i) s += a.value()[i];
  return detail::make_node("sum", Tensor::scalar(s), {a}, [](Node& n, BackwardCtx& ctx) {
    double g = (*ctx.find(&n))[0];
    Tensor& ga = ctx.grad(*n.inputs[0]);
    for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  });
}

inline Var mean_all(const Var& a) {
  require(a.value().numel() > 0, "mean: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().numel()));
}

// Contiguous row range [begin, begin+count) of the matrix view.
inline Var slice_rows(const Var& a, int64_t begin, int64_t count) {
  const Tensor& x = a.value();
  int64_t cols = x.cols();
  require(begin >= 0 && begin + count <= x.rows(), "slice_rows: out of range");
  Tensor out({count, cols});
  std::copy(x.data() + begin * cols, x.data() + (begin + count) * cols, out.data());
  return detail::make_node("slice_rows", std::move(out), {a},
                           [begin](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    Tensor& ga = ctx.grad(*n.inputs[0]);
    int64_t cols = g.cols();
    for (int64_t i = 0; i < g.numel(); ++i) ga[begin * cols + i] += g[i];
  });
}

// Contiguous column range of the matrix view.
inline Var slice_cols(const Var& a, int64_t begin, int64_t count) {
  const Tensor& x = a.value();
  int64_t rows = x.rows(), cols = x.cols();
  require(begin >= 0 && begin + count <= cols, "slice_cols: out of range");
  Tensor out({rows, count});
  for (int64_t r = 0; r < rows; ++r)
    std::copy(x.data() + r * cols + begin, x.data() + r * cols + begin + count,
              out.data() + r * count);
  return detail::make_node("slice_cols", std::move(out), {a},
                           [begin, cols](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    Tensor& ga = ctx.grad(*n.inputs[0]);
    int64_t rows = g.rows(), count = g.cols();
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < count; ++c) ga[r * cols + begin + c] += g[r * count + c];
  });
}

// Row gather by arbitrary index list; backward scatter-adds.
inline Var gather_rows(const Var& a, std::vector<int64_t> idx) {
  const Tensor& x = a.value();
  int64_t cols = x.cols();
  Tensor out({static_cast<int64_t>(idx.size()), cols});
  for (size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < x.rows(), "gather_rows: index out of range");
    std::copy(x.data() + idx[i] * cols, x.data() + (idx[i] + 1) * cols, out.data() + i * cols);
  }
  return detail::make_node("gather_rows", std::move(out), {a},
                           [idx = std::move(idx)](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    Tensor& ga = ctx.grad(*n.inputs[0]);
    int64_t cols = g.cols();
    for (size_t i = 0; i < idx.size(); ++i)
      for (int64_t c = 0; c < cols; ++c) ga[idx[i] * cols + c] += g[static_cast<int64_t>(i) * cols + c];
  });
}

// Pick scalar entries (r,c) of the matrix view -> [n x 1].
inline Var gather_entries(const Var& a, std::vector<std::pair<int64_t, int64_t>> rc) {
  const Tensor& x = a.value();
  int64_t cols = x.cols();
  Tensor out({static_cast<int64_t>(rc.size()), 1});
  for (size_t i = 0; i < rc.size(); ++i) {
    require(rc[i].first >= 0 && rc[i].first < x.rows() && rc[i].second >= 0 && rc[i].second < cols,
            "gather_entries: index out of range");
    out[static_cast<int64_t>(i)] = x[rc[i].first * cols + rc[i].second];
  }
  return detail::make_node("gather_entries", std::move(out), {a},
                           [rc = std::move(rc), cols](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    Tensor& ga = ctx.grad(*n.inputs[0]);
    for (size_t i = 0; i < rc.size(); ++i)
      ga[rc[i].first * cols + rc[i].second] += g[static_cast<int64_t>(i)];
  });
}

// out = x where mask == 0, fill where mask != 0; gradient blocked on the
// filled entries. mask is a plain tensor of the same shape.
inline Var masked_fill(const Var& x, Tensor mask, double fill) {
  require(mask.same_shape(x.value()), "masked_fill: mask shape mismatch");
  Tensor out = x.value();
  for (int64_t i = 0; i < out.numel(); ++i)
    if (mask[i] != 0.0) out[i] = fill;
  return detail::make_node("masked_fill", std::move(out), {x},
                           [mask = std::move(mask)](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    Tensor& gx = ctx.grad(*n.inputs[0]);
    for (int64_t i = 0; i < g.numel(); ++i)
      if (mask[i] == 0.0) gx[i] += g[i];
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  int64_t cols = parts[0].cols(), rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows: col mismatch");
    rows += p.rows();
  }
  Tensor out({rows, cols});
  int64_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().numel(), out.data() + off);
    off += p.value().numel();
  }
  std::vector<Var> inputs = parts;
  return detail::make_node("concat_rows", std::move(out), std::move(inputs),
                           [](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    int64_t off = 0;
    for (auto& in : n.inputs) {
      int64_t m = in->value.numel();
      if (in->requires_grad) {
        Tensor& gi = ctx.grad(*in);
        for (int64_t i = 0; i < m; ++i) gi[i] += g[off + i];
      }
      off += m;
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  int64_t rows = parts[0].rows(), cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Tensor out({rows, cols});
  int64_t off = 0;
  for (const Var& p : parts) {
    int64_t pc = p.cols();
    for (int64_t r = 0; r < rows; ++r)
      std::copy(p.value().data() + r * pc, p.value().data() + (r + 1) * pc,
                out.data() + r * cols + off);
    off += pc;
  }
  std::vector<Var> inputs = parts;
  return detail::make_node("concat_cols", std::move(out), std::move(inputs),
                           [](Node& n, BackwardCtx& ctx) {
    const Tensor& g = *ctx.find(&n);
    int64_t rows = g.rows(), cols = g.cols();
    int64_t off = 0;
    for (auto& in : n.inputs) {
      int64_t pc = in->value.cols();
      if (in->requires_grad) {
        Tensor& gi = ctx.grad(*in);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t c = 0; c < pc; ++c) gi[r * pc + c] += g[r * cols + off + c];
      }
      off += pc;
    }
  });
}

}  // namespace evmatch
