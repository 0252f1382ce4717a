#include "graph.hpp"

#include <algorithm>
#include <cmath>

namespace cfasl {

const Tensor& Var::value() const { return g->value(*this); }
const std::vector<int64_t>& Var::shape() const { return value().shape(); }

Var Graph::leaf(Tensor v) { return make(std::move(v), true, nullptr); }
Var Graph::constant(Tensor v) { return make(std::move(v), false, nullptr); }

Var Graph::make(Tensor value, bool requires_grad, BackwardFn bw) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = requires_grad ? std::move(bw) : nullptr;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Tensor Graph::grad(Var v) const {
  const Node& n = node(v.id);
  if (n.grad.defined()) return n.grad;
  return Tensor(n.value.shape());
}

Tensor& Graph::grad_buffer(int32_t id) {
  Node& n = node(id);
  if (!n.grad.defined()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var root) {
  CFASL_CHECK_ARG(root.g == this, "backward: root from another graph");
  CFASL_CHECK_ARG(value(root).numel() == 1, "backward: root must be scalar");
  grad_buffer(root.id)[0] += 1.0;
  for (int32_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.grad.defined() || !n.backward) continue;
    n.backward(*this, i);
  }
}

namespace {

Graph& same_graph(Var a, Var b) {
  CFASL_CHECK_ARG(a.g == b.g && a.g != nullptr, "variables from different graphs");
  return *a.g;
}

// Accumulate flat data into the grad buffer of node `id` if it wants grads.
inline void acc_flat(Graph& g, int32_t id, const double* data, int64_t n) {
  if (!g.requires_grad_id(id)) return;
  Tensor& buf = g.grad_buffer(id);
  VecMap(buf.data(), n) += ConstVecMap(data, n);
}

inline const Tensor& out_grad(Graph& g, int32_t self) { return g.node(self).grad; }

bool any_rg(Graph& g, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (g.requires_grad(v)) return true;
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  CFASL_CHECK_ARG(av.same_shape(bv),
                  "add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Tensor out(av.shape());
  out.vec() = av.vec() + bv.vec();
  int32_t aid = a.id, bid = b.id;
  return g.make(std::move(out), any_rg(g, {a, b}), [aid, bid](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    acc_flat(gr, aid, go.data(), go.numel());
    acc_flat(gr, bid, go.data(), go.numel());
  });
}

Var add_n(const std::vector<Var>& parts) {
  CFASL_CHECK_ARG(!parts.empty(), "add_n: empty input");
  Graph& g = *parts[0].g;
  const Tensor& first = g.value(parts[0]);
  Tensor out(first.shape());
  bool rg = false;
  std::vector<int32_t> ids;
  for (Var p : parts) {
    CFASL_CHECK_ARG(p.g == &g, "add_n: mixed graphs");
    const Tensor& pv = g.value(p);
    CFASL_CHECK_ARG(pv.same_shape(first), "add_n: shape mismatch");
    out.vec() += pv.vec();
    rg = rg || g.requires_grad(p);
    ids.push_back(p.id);
  }
  return g.make(std::move(out), rg, [ids](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    for (int32_t id : ids) acc_flat(gr, id, go.data(), go.numel());
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  CFASL_CHECK_ARG(av.same_shape(bv),
                  "sub: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Tensor out(av.shape());
  out.vec() = av.vec() - bv.vec();
  int32_t aid = a.id, bid = b.id;
  return g.make(std::move(out), any_rg(g, {a, b}), [aid, bid](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    acc_flat(gr, aid, go.data(), go.numel());
    if (gr.requires_grad_id(bid)) {
      Tensor& buf = gr.grad_buffer(bid);
      VecMap(buf.data(), buf.numel()) -= ConstVecMap(go.data(), go.numel());
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  CFASL_CHECK_ARG(av.same_shape(bv),
                  "mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Tensor out(av.shape());
  out.vec() = av.vec().cwiseProduct(bv.vec());
  int32_t aid = a.id, bid = b.id;
  return g.make(std::move(out), any_rg(g, {a, b}), [aid, bid](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    const Tensor& av2 = gr.node(aid).value;
    const Tensor& bv2 = gr.node(bid).value;
    if (gr.requires_grad_id(aid)) {
      Tensor& buf = gr.grad_buffer(aid);
      buf.vec() += go.vec().cwiseProduct(bv2.vec());
    }
    if (gr.requires_grad_id(bid)) {
      Tensor& buf = gr.grad_buffer(bid);
      buf.vec() += go.vec().cwiseProduct(av2.vec());
    }
  });
}

Var div(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  CFASL_CHECK_ARG(av.same_shape(bv),
                  "div: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Tensor out(av.shape());
  out.vec() = av.vec().cwiseQuotient(bv.vec());
  int32_t aid = a.id, bid = b.id;
  return g.make(std::move(out), any_rg(g, {a, b}), [aid, bid](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    const Tensor& av2 = gr.node(aid).value;
    const Tensor& bv2 = gr.node(bid).value;
    if (gr.requires_grad_id(aid)) {
      Tensor& buf = gr.grad_buffer(aid);
      buf.vec() += go.vec().cwiseQuotient(bv2.vec());
    }
    if (gr.requires_grad_id(bid)) {
      Tensor& buf = gr.grad_buffer(bid);
      buf.vec() -= go.vec().cwiseProduct(av2.vec()).cwiseQuotient(
          bv2.vec().cwiseProduct(bv2.vec()));
    }
  });
}

Var neg(Var a) { return mul_scalar(a, -1.0); }

Var add_scalar(Var a, double c) {
  Graph& g = *a.g;
  Tensor out(g.value(a).shape());
  out.vec() = g.value(a).vec().array() + c;
  int32_t aid = a.id;
  return g.make(std::move(out), g.requires_grad(a), [aid](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    acc_flat(gr, aid, go.data(), go.numel());
  });
}

Var mul_scalar(Var a, double c) {
  Graph& g = *a.g;
  Tensor out(g.value(a).shape());
  out.vec() = g.value(a).vec() * c;
  int32_t aid = a.id;
  return g.make(std::move(out), g.requires_grad(a), [aid, c](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    if (gr.requires_grad_id(aid)) {
      Tensor& buf = gr.grad_buffer(aid);
      buf.vec() += go.vec() * c;
    }
  });
}

Var scale_by(Var a, Var s) {
  Graph& g = same_graph(a, s);
  CFASL_CHECK_ARG(g.value(s).numel() == 1, "scale_by: scale must be scalar");
  double sv = g.value(s)[0];
  Tensor out(g.value(a).shape());
  out.vec() = g.value(a).vec() * sv;
  int32_t aid = a.id, sid = s.id;
  return g.make(std::move(out), any_rg(g, {a, s}), [aid, sid](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    const Tensor& av = gr.node(aid).value;
    double sv2 = gr.node(sid).value[0];
    if (gr.requires_grad_id(aid)) {
      Tensor& buf = gr.grad_buffer(aid);
      buf.vec() += go.vec() * sv2;
    }
    if (gr.requires_grad_id(sid)) {
      gr.grad_buffer(sid)[0] += go.vec().dot(av.vec());
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra / shape ops
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  CFASL_CHECK_ARG(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
                  "matmul: incompatible shapes " + av.shape_str() + " x " + bv.shape_str());
  Tensor out({av.dim(0), bv.dim(1)});
  out.mat() = av.mat() * bv.mat();
  int32_t aid = a.id, bid = b.id;
  return g.make(std::move(out), any_rg(g, {a, b}), [aid, bid](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    const Tensor& av2 = gr.node(aid).value;
    const Tensor& bv2 = gr.node(bid).value;
    ConstMatMap gm(go.data(), av2.dim(0), bv2.dim(1));
    if (gr.requires_grad_id(aid)) {
      Tensor& buf = gr.grad_buffer(aid);
      buf.mat() += gm * bv2.mat().transpose();
    }
    if (gr.requires_grad_id(bid)) {
      Tensor& buf = gr.grad_buffer(bid);
      buf.mat() += av2.mat().transpose() * gm;
    }
  });
}

Var transpose(Var a) {
  Graph& g = *a.g;
  const Tensor& av = g.value(a);
  CFASL_CHECK_ARG(av.rank() == 2, "transpose: rank-2 required");
  Tensor out({av.dim(1), av.dim(0)});
  out.mat() = av.mat().transpose();
  int32_t aid = a.id;
  return g.make(std::move(out), g.requires_grad(a), [aid](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    if (gr.requires_grad_id(aid)) {
      Tensor& buf = gr.grad_buffer(aid);
      buf.mat() += go.mat().transpose();
    }
  });
}

Var reshape(Var a, std::vector<int64_t> shape) {
  Graph& g = *a.g;
  Tensor out = g.value(a).reshaped(std::move(shape));
  int32_t aid = a.id;
  return g.make(std::move(out), g.requires_grad(a), [aid](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    acc_flat(gr, aid, go.data(), go.numel());
  });
}

Var slice_block(Var a, int64_t offset, std::vector<int64_t> shape) {
  Graph& g = *a.g;
  const Tensor& av = g.value(a);
  int64_t n = shape_numel(shape);
  CFASL_CHECK_ARG(offset >= 0 && offset + n <= av.numel(), "slice_block out of range");
  Tensor out(std::move(shape));
  std::copy(av.data() + offset, av.data() + offset + n, out.data());
  int32_t aid = a.id;
  return g.make(std::move(out), g.requires_grad(a), [aid, offset](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    if (gr.requires_grad_id(aid)) {
      Tensor& buf = gr.grad_buffer(aid);
      VecMap(buf.data() + offset, go.numel()) += ConstVecMap(go.data(), go.numel());
    }
  });
}

Var concat_vec(const std::vector<Var>& parts) {
  CFASL_CHECK_ARG(!parts.empty(), "concat_vec: empty input");
  Graph& g = *parts[0].g;
  int64_t total = 0;
  bool rg = false;
  for (Var p : parts) {
    CFASL_CHECK_ARG(p.g == &g, "concat_vec: mixed graphs");
    total += g.value(p).numel();
    rg = rg || g.requires_grad(p);
  }
  Tensor out({total});
  int64_t off = 0;
  std::vector<int32_t> ids;
  std::vector<int64_t> sizes;
  for (Var p : parts) {
    const Tensor& pv = g.value(p);
    std::copy(pv.data(), pv.data() + pv.numel(), out.data() + off);
    off += pv.numel();
    ids.push_back(p.id);
    sizes.push_back(pv.numel());
  }
  return g.make(std::move(out), rg, [ids, sizes](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    int64_t o = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      acc_flat(gr, ids[i], go.data() + o, sizes[i]);
      o += sizes[i];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  CFASL_CHECK_ARG(!parts.empty(), "concat_rows: empty input");
  Graph& g = *parts[0].g;
  int64_t cols = -1;
  int64_t rows = 0;
  bool rg = false;
  for (Var p : parts) {
    CFASL_CHECK_ARG(p.g == &g, "concat_rows: mixed graphs");
    const Tensor& pv = g.value(p);
    CFASL_CHECK_ARG(pv.rank() == 1 || pv.rank() == 2, "concat_rows: rank must be 1 or 2");
    int64_t c = pv.rank() == 1 ? pv.dim(0) : pv.dim(1);
    int64_t r = pv.rank() == 1 ? 1 : pv.dim(0);
    if (cols < 0) cols = c;
    CFASL_CHECK_ARG(c == cols, "concat_rows: column mismatch");
    rows += r;
    rg = rg || g.requires_grad(p);
  }
  Tensor out({rows, cols});
  int64_t off = 0;
  std::vector<int32_t> ids;
  std::vector<int64_t> sizes;
  for (Var p : parts) {
    const Tensor& pv = g.value(p);
    std::copy(pv.data(), pv.data() + pv.numel(), out.data() + off);
    off += pv.numel();
    ids.push_back(p.id);
    sizes.push_back(pv.numel());
  }
  return g.make(std::move(out), rg, [ids, sizes](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    int64_t o = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
      acc_flat(gr, ids[i], go.data() + o, sizes[i]);
      o += sizes[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Var sum(Var a) {
  Graph& g = *a.g;
  const Tensor& av = g.value(a);
  Tensor out = Tensor::scalar(av.vec().sum());
  int32_t aid = a.id;
  return g.make(std::move(out), g.requires_grad(a), [aid](Graph& gr, int32_t self) {
    double go = gr.node(self).grad[0];
    if (gr.requires_grad_id(aid)) {
      Tensor& buf = gr.grad_buffer(aid);
      buf.vec().array() += go;
    }
  });
}

Var mean(Var a) {
  Graph& g = *a.g;
  int64_t n = g.value(a).numel();
  CFASL_CHECK_ARG(n > 0, "mean of empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_lastdim(Var a) {
  Graph& g = *a.g;
  const Tensor& av = g.value(a);
  CFASL_CHECK_ARG(av.rank() >= 1, "sum_lastdim: rank >= 1 required");
  int64_t d = av.dim(av.rank() - 1);
  int64_t outer = av.numel() / d;
  std::vector<int64_t> shape(av.shape().begin(), av.shape().end() - 1);
  Tensor out(shape);
  for (int64_t i = 0; i < outer; ++i)
    out[i] = ConstVecMap(av.data() + i * d, d).sum();
  int32_t aid = a.id;
  return g.make(std::move(out), g.requires_grad(a), [aid, d, outer](Graph& gr, int32_t self) {
    const Tensor& go = out_grad(gr, self);
    if (gr.requires_grad_id(aid)) {
      Tensor& buf = gr.grad_buffer(aid);
      for (int64_t i = 0; i < outer; ++i)
        VecMap(buf.data() + i * d, d).array() += go[i];
    }
  });
}

Var max_lastdim(Var a) {
  Graph& g = *a.g;
  const Tensor& av = g.value(a);
  CFASL_CHECK_ARG(av.rank() >= 1, "max_lastdim: rank >= 1 required");
  int64_t d = av.dim(av.rank() - 1);
  CFASL_CHECK_ARG(d > 0, "max_lastdim: empty last dimension");
  int64_t outer = av.numel() / d;
  std::vector<int64_t> shape(av.shape().begin(), av.shape().end() - 1);
  Tensor out(shape);
  std::vector<int64_t> argmax(static_cast<size_t>(outer));
  for (int64_t i = 0; i < outer; ++i) {
    const double* row = av.data() + i * d;
    int64_t best = 0;
    for (int64_t j = 1; j < d; ++j)
      if (row[j] > row[best]) best = j;
    argmax[static_cast<size_t>(i)] = best;
    out[i] = row[best];
  }
  int32_t aid = a.id;
  return g.make(std::move(out), g.requires_grad(a),
                [aid, d, outer, argmax](Graph& gr, int32_t self) {
                  const Tensor& go = out_grad(gr, self);
                  if (gr.requires_grad_id(aid)) {
                    Tensor& buf = gr.grad_buffer(aid);
                    for (int64_t i = 0; i < outer; ++i)
                      buf[i * d + argmax[static_cast<size_t>(i)]] += go[i];
                  }
                });
}

Var dot(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  CFASL_CHECK_ARG(av.numel() == bv.numel(), "dot: size mismatch");
  Tensor out = Tensor::scalar(av.vec().dot(bv.vec()));
  int32_t aid = a.id, bid = b.id;
  return g.make(std::move(out), any_rg(g, {a, b}), [aid, bid](Graph& gr, int32_t self) {
    double go = gr.node(self).grad[0];
    const Tensor& av2 = gr.node(aid).value;
    const Tensor& bv2 = gr.node(bid).value;
    if (gr.requires_grad_id(aid)) {
      Tensor& buf = gr.grad_buffer(aid);
      buf.vec() += go * bv2.vec();
    }
    if (gr.requires_grad_id(bid)) {
      Tensor& buf = gr.grad_buffer(bid);
      buf.vec() += go * av2.vec();
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

namespace {

template <typename FwdFn, typename BwdFn>
Var elementwise(Var a, FwdFn fwd, BwdFn bwd_factor) {
  // bwd_factor(x, y) = dy/dx evaluated from input x and output y.
  Graph& g = *a.g;
  const Tensor& av = g.value(a);
  Tensor out(av.shape());
  for (int64_t i = 0; i < av.numel(); ++i) out[i] = fwd(av[i]);
  int32_t aid = a.id;
  int32_t self_hint = -1;
  (void)self_hint;
  return g.make(std::move(out), g.requires_grad(a),
                [aid, bwd_factor](Graph& gr, int32_t self) {
                  const Tensor& go = gr.node(self).grad;
                  const Tensor& yv = gr.node(self).value;
                  const Tensor& xv = gr.node(aid).value;
                  if (gr.requires_grad_id(aid)) {
                    Tensor& buf = gr.grad_buffer(aid);
                    for (int64_t i = 0; i < go.numel(); ++i)
                      buf[i] += go[i] * bwd_factor(xv[i], yv[i]);
                  }
                });
}

}  // namespace

Var exp(Var a) {
  return elementwise(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var log(Var a) {
  return elementwise(
      a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return elementwise(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return elementwise(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Var sigmoid(Var a) {
  return elementwise(
      a,
      [](double x) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return elementwise(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return elementwise(
      a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) {
        return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
      });
}

Var clamp(Var a, double lo, double hi) {
  CFASL_CHECK_ARG(lo <= hi, "clamp: lo > hi");
  return elementwise(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

Var row_softmax(Var a) {
  Graph& g = *a.g;
  const Tensor& av = g.value(a);
  CFASL_CHECK_ARG(av.rank() == 2, "row_softmax: rank-2 required");
  int64_t rows = av.dim(0), cols = av.dim(1);
  Tensor out(av.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = out.data() + r * cols;
    double m = *std::max_element(x, x + cols);
    double s = 0;
    for (int64_t c = 0; c < cols; ++c) s += (y[c] = std::exp(x[c] - m));
    for (int64_t c = 0; c < cols; ++c) y[c] /= s;
  }
  int32_t aid = a.id;
  return g.make(std::move(out), g.requires_grad(a),
                [aid, rows, cols](Graph& gr, int32_t self) {
                  const Tensor& go = gr.node(self).grad;
                  const Tensor& yv = gr.node(self).value;
                  if (!gr.requires_grad_id(aid)) return;
                  Tensor& buf = gr.grad_buffer(aid);
                  for (int64_t r = 0; r < rows; ++r) {
                    const double* gy = go.data() + r * cols;
                    const double* y = yv.data() + r * cols;
                    double dotp = 0;
                    for (int64_t c = 0; c < cols; ++c) dotp += gy[c] * y[c];
                    double* gx = buf.data() + r * cols;
                    for (int64_t c = 0; c < cols; ++c) gx[c] += (gy[c] - dotp) * y[c];
                  }
                });
}

Var logsumexp_vec(Var a) {
  Graph& g = *a.g;
  const Tensor& av = g.value(a);
  CFASL_CHECK_ARG(av.rank() == 1, "logsumexp_vec: rank-1 required");
  double m = av.vec().maxCoeff();
  double s = (av.vec().array() - m).exp().sum();
  Tensor out = Tensor::scalar(m + std::log(s));
  int32_t aid = a.id;
  return g.make(std::move(out), g.requires_grad(a), [aid](Graph& gr, int32_t self) {
    double go = gr.node(self).grad[0];
    double lse = gr.node(self).value[0];
    const Tensor& xv = gr.node(aid).value;
    if (gr.requires_grad_id(aid)) {
      Tensor& buf = gr.grad_buffer(aid);
      buf.vec().array() += go * (xv.vec().array() - lse).exp();
    }
  });
}

Var logsumexp_axis1(Var a, const Tensor* log_weights) {
  Graph& g = *a.g;
  const Tensor& av = g.value(a);
  CFASL_CHECK_ARG(av.rank() == 2 || av.rank() == 3, "logsumexp_axis1: rank 2 or 3");
  int64_t B = av.dim(0);
  int64_t M = av.dim(1);
  int64_t R = av.rank() == 3 ? av.dim(2) : 1;
  Tensor lw;
  if (log_weights) {
    CFASL_CHECK_ARG(log_weights->rank() == 2 && log_weights->dim(0) == B &&
                        log_weights->dim(1) == M,
                    "logsumexp_axis1: bad weight shape");
    lw = *log_weights;
  } else {
    lw = Tensor({B, M});
  }
  std::vector<int64_t> oshape = av.rank() == 3
                                    ? std::vector<int64_t>{B, R}
                                    : std::vector<int64_t>{B};
  Tensor out(oshape);
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t r = 0; r < R; ++r) {
      double m = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < M; ++j)
        m = std::max(m, av[(b * M + j) * R + r] + lw[b * M + j]);
      double s = 0;
      for (int64_t j = 0; j < M; ++j)
        s += std::exp(av[(b * M + j) * R + r] + lw[b * M + j] - m);
      out[b * R + r] = m + std::log(s);
    }
  }
  int32_t aid = a.id;
  return g.make(std::move(out), g.requires_grad(a),
                [aid, B, M, R, lw](Graph& gr, int32_t self) {
                  const Tensor& go = gr.node(self).grad;
                  const Tensor& ov = gr.node(self).value;
                  const Tensor& xv = gr.node(aid).value;
                  if (!gr.requires_grad_id(aid)) return;
                  Tensor& buf = gr.grad_buffer(aid);
                  for (int64_t b = 0; b < B; ++b)
                    for (int64_t j = 0; j < M; ++j)
                      for (int64_t r = 0; r < R; ++r) {
                        int64_t idx = (b * M + j) * R + r;
                        buf[idx] += go[b * R + r] *
                                    std::exp(xv[idx] + lw[b * M + j] - ov[b * R + r]);
                      }
                });
}

// ---------------------------------------------------------------------------
// Fused density / loss kernels
// ---------------------------------------------------------------------------

Var gauss_logdens_pairs(Var z, Var mu, Var logvar) {
  Graph& g = same_graph(z, mu);
  same_graph(mu, logvar);
  const Tensor& zv = g.value(z);
  const Tensor& mv = g.value(mu);
  const Tensor& lv = g.value(logvar);
  CFASL_CHECK_ARG(zv.rank() == 2 && zv.same_shape(mv) && zv.same_shape(lv),
                  "gauss_logdens_pairs: [B,D] inputs required");
  int64_t B = zv.dim(0), D = zv.dim(1);
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  Tensor out({B, B, D});
  for (int64_t n = 0; n < B; ++n)
    for (int64_t m = 0; m < B; ++m)
      for (int64_t j = 0; j < D; ++j) {
        double d = zv[n * D + j] - mv[m * D + j];
        double l = lv[m * D + j];
        out[(n * B + m) * D + j] = -0.5 * (kLog2Pi + l + d * d * std::exp(-l));
      }
  int32_t zid = z.id, mid = mu.id, lid = logvar.id;
  return g.make(std::move(out), any_rg(g, {z, mu, logvar}),
                [zid, mid, lid, B, D](Graph& gr, int32_t self) {
                  const Tensor& go = gr.node(self).grad;
                  const Tensor& zv2 = gr.node(zid).value;
                  const Tensor& mv2 = gr.node(mid).value;
                  const Tensor& lv2 = gr.node(lid).value;
                  bool wz = gr.requires_grad_id(zid);
                  bool wm = gr.requires_grad_id(mid);
                  bool wl = gr.requires_grad_id(lid);
                  Tensor* gz = wz ? &gr.grad_buffer(zid) : nullptr;
                  Tensor* gm = wm ? &gr.grad_buffer(mid) : nullptr;
                  Tensor* gl = wl ? &gr.grad_buffer(lid) : nullptr;
                  for (int64_t n = 0; n < B; ++n)
                    for (int64_t m = 0; m < B; ++m)
                      for (int64_t j = 0; j < D; ++j) {
                        double gonm = go[(n * B + m) * D + j];
                        if (gonm == 0) continue;
                        double d = zv2[n * D + j] - mv2[m * D + j];
                        double el = std::exp(-lv2[m * D + j]);
                        if (wz) (*gz)[n * D + j] += gonm * (-d * el);
                        if (wm) (*gm)[m * D + j] += gonm * (d * el);
                        if (wl) (*gl)[m * D + j] += gonm * (-0.5 + 0.5 * d * d * el);
                      }
                });
}

Var bce_logits_sum(Var logits, const Tensor& targets) {
  Graph& g = *logits.g;
  const Tensor& lv = g.value(logits);
  CFASL_CHECK_ARG(lv.same_shape(targets), "bce_logits_sum: shape mismatch");
  double total = 0;
  for (int64_t i = 0; i < lv.numel(); ++i) {
    double l = lv[i];
    total += std::max(l, 0.0) + std::log1p(std::exp(-std::abs(l))) - targets[i] * l;
  }
  Tensor t = targets;
  int32_t aid = logits.id;
  return g.make(Tensor::scalar(total), g.requires_grad(logits),
                [aid, t](Graph& gr, int32_t self) {
                  double go = gr.node(self).grad[0];
                  const Tensor& lv2 = gr.node(aid).value;
                  if (!gr.requires_grad_id(aid)) return;
                  Tensor& buf = gr.grad_buffer(aid);
                  for (int64_t i = 0; i < lv2.numel(); ++i) {
                    double l = lv2[i];
                    double s = l >= 0 ? 1.0 / (1.0 + std::exp(-l))
                                      : std::exp(l) / (1.0 + std::exp(l));
                    buf[i] += go * (s - t[i]);
                  }
                });
}

Var cb_log_normalizer(Var logits) {
  // log C(lambda) with lambda = sigmoid(l); C = l / tanh(l/2), C(0) = 2.
  auto fwd = [](double l) {
    if (std::abs(l) < 1e-4) return std::log(2.0) + l * l / 12.0;
    return std::log(std::abs(l)) - std::log(std::abs(std::tanh(l / 2.0)));
  };
  auto bwd = [](double l, double) {
    if (std::abs(l) < 1e-4) return l / 6.0;
    double t = std::tanh(l / 2.0);
    return 1.0 / l - (1.0 - t * t) / (2.0 * t);
  };
  return elementwise(logits, fwd, bwd);
}

// ---------------------------------------------------------------------------
// Bias broadcast
// ---------------------------------------------------------------------------

Var add_rowvec(Var x, Var b) {
  Graph& g = same_graph(x, b);
  const Tensor& xv = g.value(x);
  const Tensor& bv = g.value(b);
  CFASL_CHECK_ARG(xv.rank() == 2 && bv.rank() == 1 && xv.dim(1) == bv.dim(0),
                  "add_rowvec: shape mismatch");
  int64_t B = xv.dim(0), N = xv.dim(1);
  Tensor out(xv.shape());
  for (int64_t i = 0; i < B; ++i)
    for (int64_t j = 0; j < N; ++j) out[i * N + j] = xv[i * N + j] + bv[j];
  int32_t xid = x.id, bid = b.id;
  return g.make(std::move(out), any_rg(g, {x, b}), [xid, bid, B, N](Graph& gr, int32_t self) {
    const Tensor& go = gr.node(self).grad;
    acc_flat(gr, xid, go.data(), go.numel());
    if (gr.requires_grad_id(bid)) {
      Tensor& buf = gr.grad_buffer(bid);
      for (int64_t i = 0; i < B; ++i)
        for (int64_t j = 0; j < N; ++j) buf[j] += go[i * N + j];
    }
  });
}

Var add_channel_bias(Var x, Var b) {
  Graph& g = same_graph(x, b);
  const Tensor& xv = g.value(x);
  const Tensor& bv = g.value(b);
  CFASL_CHECK_ARG(xv.rank() == 4 && bv.rank() == 1 && xv.dim(1) == bv.dim(0),
                  "add_channel_bias: shape mismatch");
  int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
  Tensor out(xv.shape());
  for (int64_t i = 0; i < B; ++i)
    for (int64_t c = 0; c < C; ++c) {
      double bc = bv[c];
      const double* src = xv.data() + (i * C + c) * HW;
      double* dst = out.data() + (i * C + c) * HW;
      for (int64_t k = 0; k < HW; ++k) dst[k] = src[k] + bc;
    }
  int32_t xid = x.id, bid = b.id;
  return g.make(std::move(out), any_rg(g, {x, b}),
                [xid, bid, B, C, HW](Graph& gr, int32_t self) {
                  const Tensor& go = gr.node(self).grad;
                  acc_flat(gr, xid, go.data(), go.numel());
                  if (gr.requires_grad_id(bid)) {
                    Tensor& buf = gr.grad_buffer(bid);
                    for (int64_t i = 0; i < B; ++i)
                      for (int64_t c = 0; c < C; ++c)
                        buf[c] += ConstVecMap(go.data() + (i * C + c) * HW, HW).sum();
                  }
                });
}

// ---------------------------------------------------------------------------
// Convolutions (im2col based)
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int64_t B, C, H, W, KH, KW, S, P, OH, OW;
};

Tensor im2col(const Tensor& x, const ConvDims& d) {
  Tensor cols({d.B * d.OH * d.OW, d.C * d.KH * d.KW});
  for (int64_t b = 0; b < d.B; ++b)
    for (int64_t oh = 0; oh < d.OH; ++oh)
      for (int64_t ow = 0; ow < d.OW; ++ow) {
        int64_t row = (b * d.OH + oh) * d.OW + ow;
        double* dst = cols.data() + row * d.C * d.KH * d.KW;
        for (int64_t c = 0; c < d.C; ++c)
          for (int64_t kh = 0; kh < d.KH; ++kh) {
            int64_t h = oh * d.S - d.P + kh;
            for (int64_t kw = 0; kw < d.KW; ++kw) {
              int64_t w = ow * d.S - d.P + kw;
              int64_t col = (c * d.KH + kh) * d.KW + kw;
              dst[col] = (h >= 0 && h < d.H && w >= 0 && w < d.W)
                             ? x[((b * d.C + c) * d.H + h) * d.W + w]
                             : 0.0;
            }
          }
      }
  return cols;
}

void col2im_acc(const Tensor& cols, const ConvDims& d, Tensor& x) {
  for (int64_t b = 0; b < d.B; ++b)
    for (int64_t oh = 0; oh < d.OH; ++oh)
      for (int64_t ow = 0; ow < d.OW; ++ow) {
        int64_t row = (b * d.OH + oh) * d.OW + ow;
        const double* src = cols.data() + row * d.C * d.KH * d.KW;
        for (int64_t c = 0; c < d.C; ++c)
          for (int64_t kh = 0; kh < d.KH; ++kh) {
            int64_t h = oh * d.S - d.P + kh;
            if (h < 0 || h >= d.H) continue;
            for (int64_t kw = 0; kw < d.KW; ++kw) {
              int64_t w = ow * d.S - d.P + kw;
              if (w < 0 || w >= d.W) continue;
              x[((b * d.C + c) * d.H + h) * d.W + w] += src[(c * d.KH + kh) * d.KW + kw];
            }
          }
      }
}

}  // namespace

Var conv2d(Var x, Var w, int kh, int kw, int stride, int pad) {
  Graph& g = same_graph(x, w);
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  CFASL_CHECK_ARG(xv.rank() == 4, "conv2d: input must be [B,C,H,W]");
  CFASL_CHECK_ARG(wv.rank() == 2, "conv2d: weight must be [Cout, Cin*KH*KW]");
  ConvDims d;
  d.B = xv.dim(0);
  d.C = xv.dim(1);
  d.H = xv.dim(2);
  d.W = xv.dim(3);
  d.KH = kh;
  d.KW = kw;
  d.S = stride;
  d.P = pad;
  d.OH = (d.H + 2 * d.P - d.KH) / d.S + 1;
  d.OW = (d.W + 2 * d.P - d.KW) / d.S + 1;
  CFASL_CHECK_ARG(d.OH > 0 && d.OW > 0, "conv2d: empty output");
  CFASL_CHECK_ARG(wv.dim(1) == d.C * d.KH * d.KW, "conv2d: weight column mismatch");
  int64_t Cout = wv.dim(0);

  Tensor cols = im2col(xv, d);
  // y2d [B*OH*OW, Cout] = cols * w^T
  Tensor y2d({d.B * d.OH * d.OW, Cout});
  y2d.mat() = cols.mat() * wv.mat().transpose();
  Tensor out({d.B, Cout, d.OH, d.OW});
  for (int64_t b = 0; b < d.B; ++b)
    for (int64_t oh = 0; oh < d.OH; ++oh)
      for (int64_t ow = 0; ow < d.OW; ++ow) {
        int64_t row = (b * d.OH + oh) * d.OW + ow;
        for (int64_t co = 0; co < Cout; ++co)
          out[((b * Cout + co) * d.OH + oh) * d.OW + ow] = y2d[row * Cout + co];
      }

  int32_t xid = x.id, wid = w.id;
  return g.make(std::move(out), any_rg(g, {x, w}),
                [xid, wid, d, Cout, cols](Graph& gr, int32_t self) {
                  const Tensor& go = gr.node(self).grad;
                  const Tensor& wv2 = gr.node(wid).value;
                  Tensor gy2d({d.B * d.OH * d.OW, Cout});
                  for (int64_t b = 0; b < d.B; ++b)
                    for (int64_t oh = 0; oh < d.OH; ++oh)
                      for (int64_t ow = 0; ow < d.OW; ++ow) {
                        int64_t row = (b * d.OH + oh) * d.OW + ow;
                        for (int64_t co = 0; co < Cout; ++co)
                          gy2d[row * Cout + co] =
                              go[((b * Cout + co) * d.OH + oh) * d.OW + ow];
                      }
                  if (gr.requires_grad_id(wid)) {
                    Tensor& gw = gr.grad_buffer(wid);
                    gw.mat() += gy2d.mat().transpose() * cols.mat();
                  }
                  if (gr.requires_grad_id(xid)) {
                    Tensor gcols({d.B * d.OH * d.OW, d.C * d.KH * d.KW});
                    gcols.mat() = gy2d.mat() * wv2.mat();
                    Tensor& gx = gr.grad_buffer(xid);
                    col2im_acc(gcols, d, gx);
                  }
                });
}

Var conv2d_transpose(Var x, Var w, int kh, int kw, int stride, int pad) {
  Graph& g = same_graph(x, w);
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  CFASL_CHECK_ARG(xv.rank() == 4, "conv2d_transpose: input must be [B,C,H,W]");
  CFASL_CHECK_ARG(wv.rank() == 2, "conv2d_transpose: weight must be [Cin, Cout*KH*KW]");
  int64_t B = xv.dim(0), Cin = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  CFASL_CHECK_ARG(wv.dim(0) == Cin, "conv2d_transpose: weight row mismatch");
  int64_t Cout = wv.dim(1) / (kh * kw);
  CFASL_CHECK_ARG(Cout * kh * kw == wv.dim(1), "conv2d_transpose: weight column mismatch");
  int64_t OH = (H - 1) * stride - 2 * pad + kh;
  int64_t OW = (W - 1) * stride - 2 * pad + kw;
  CFASL_CHECK_ARG(OH > 0 && OW > 0, "conv2d_transpose: empty output");

  // x2d [B*H*W, Cin]; rows ordered by (b, h, w)
  Tensor x2d({B * H * W, Cin});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < Cin; ++c)
      for (int64_t h = 0; h < H; ++h)
        for (int64_t ww = 0; ww < W; ++ww)
          x2d[((b * H + h) * W + ww) * Cin + c] = xv[((b * Cin + c) * H + h) * W + ww];

  Tensor cols({B * H * W, Cout * kh * kw});
  cols.mat() = x2d.mat() * wv.mat();

  Tensor out({B, Cout, OH, OW});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < H; ++h)
      for (int64_t ww = 0; ww < W; ++ww) {
        int64_t row = (b * H + h) * W + ww;
        const double* src = cols.data() + row * Cout * kh * kw;
        for (int64_t co = 0; co < Cout; ++co)
          for (int64_t u = 0; u < kh; ++u) {
            int64_t oh = h * stride - pad + u;
            if (oh < 0 || oh >= OH) continue;
            for (int64_t v = 0; v < kw; ++v) {
              int64_t ow = ww * stride - pad + v;
              if (ow < 0 || ow >= OW) continue;
              out[((b * Cout + co) * OH + oh) * OW + ow] += src[(co * kh + u) * kw + v];
            }
          }
      }

  int32_t xid = x.id, wid = w.id;
  int64_t S = stride, P = pad, KH = kh, KW = kw;
  return g.make(
      std::move(out), any_rg(g, {x, w}),
      [xid, wid, x2d, B, Cin, Cout, H, W, OH, OW, S, P, KH, KW](Graph& gr, int32_t self) {
        const Tensor& go = gr.node(self).grad;
        const Tensor& wv2 = gr.node(wid).value;
        // Gather the gradient patches each input position scattered to.
        Tensor gcols({B * H * W, Cout * KH * KW});
        for (int64_t b = 0; b < B; ++b)
          for (int64_t h = 0; h < H; ++h)
            for (int64_t ww = 0; ww < W; ++ww) {
              int64_t row = (b * H + h) * W + ww;
              double* dst = gcols.data() + row * Cout * KH * KW;
              for (int64_t co = 0; co < Cout; ++co)
                for (int64_t u = 0; u < KH; ++u) {
                  int64_t oh = h * S - P + u;
                  for (int64_t v = 0; v < KW; ++v) {
                    int64_t ow = ww * S - P + v;
                    dst[(co * KH + u) * KW + v] =
                        (oh >= 0 && oh < OH && ow >= 0 && ow < OW)
                            ? go[((b * Cout + co) * OH + oh) * OW + ow]
                            : 0.0;
                  }
                }
            }
        if (gr.requires_grad_id(wid)) {
          Tensor& gw = gr.grad_buffer(wid);
          gw.mat() += x2d.mat().transpose() * gcols.mat();
        }
        if (gr.requires_grad_id(xid)) {
          Tensor gx2d({B * H * W, Cin});
          gx2d.mat() = gcols.mat() * wv2.mat().transpose();
          Tensor& gx = gr.grad_buffer(xid);
          for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < Cin; ++c)
              for (int64_t h = 0; h < H; ++h)
                for (int64_t ww = 0; ww < W; ++ww)
                  gx[((b * Cin + c) * H + h) * W + ww] +=
                      gx2d[((b * H + h) * W + ww) * Cin + c];
        }
      });
}

Var mse(Var a, Var b) {
  Graph& g = same_graph(a, b);
  CFASL_CHECK_ARG(g.value(a).same_shape(g.value(b)), "mse: shape mismatch");
  return mean(square(sub(a, b)));
}

}  // namespace cfasl
