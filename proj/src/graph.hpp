#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "tensor.hpp"

namespace cfasl {

class Graph;

/// Handle to a node in an autodiff Graph.
struct Var {
  Graph* g = nullptr;
  int32_t id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor& value() const;
  const std::vector<int64_t>& shape() const;
  int64_t numel() const { return value().numel(); }
  double item() const { return value().item(); }
};

/// Reverse-mode autodiff tape. Operations evaluate eagerly; backward()
/// sweeps the tape once in reverse creation order (creation order is a
/// topological order by construction).
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int32_t self)>;

  struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    BackwardFn backward;
  };

  Graph() = default;
  void reserve(size_t) {}  // node storage has stable references; no-op
  size_t size() const { return nodes_.size(); }

  Var leaf(Tensor v);      // trainable input; receives gradient
  Var constant(Tensor v);  // no gradient tracking

  Var make(Tensor value, bool requires_grad, BackwardFn bw);

  const Tensor& value(Var v) const { return node(v.id).value; }
  bool requires_grad(Var v) const { return node(v.id).requires_grad; }
  bool requires_grad_id(int32_t id) const { return node(id).requires_grad; }
  bool has_grad(Var v) const { return node(v.id).grad.defined(); }

  /// Gradient of the last backward() w.r.t. v; zeros if v never received one.
  Tensor grad(Var v) const;

  /// Accumulation buffer for node id, allocated (zeroed) on demand.
  Tensor& grad_buffer(int32_t id);

  /// Runs reverse sweep from a scalar root with seed gradient 1.
  void backward(Var root);

  Node& node(int32_t id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

 private:
  // Deque keeps references to node values stable while ops append.
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations. All are eager; shapes are validated with invalid-argument
// errors. Elementwise binary ops require identical shapes.
// ---------------------------------------------------------------------------

Var add(Var a, Var b);
/// Sum of N same-shaped variables in a single node.
Var add_n(const std::vector<Var>& parts);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var add_scalar(Var a, double c);
Var mul_scalar(Var a, double c);
/// Broadcast multiply of tensor `a` by scalar variable `s`.
Var scale_by(Var a, Var s);

Var matmul(Var a, Var b);   // [m,k] x [k,n]
Var transpose(Var a);       // [m,n] -> [n,m]
Var reshape(Var a, std::vector<int64_t> shape);
/// Contiguous sub-block [offset, offset + numel(shape)) of the flat storage.
Var slice_block(Var a, int64_t offset, std::vector<int64_t> shape);
/// Flat 1-D concatenation.
Var concat_vec(const std::vector<Var>& parts);
/// Stack along axis 0; inputs are rank-1 [C] or rank-2 [r,C] with equal C.
Var concat_rows(const std::vector<Var>& parts);

Var sum(Var a);   // -> scalar
Var mean(Var a);  // -> scalar
Var sum_lastdim(Var a);
Var max_lastdim(Var a);  // subgradient routed to the first argmax
Var dot(Var a, Var b);   // flat inner product -> scalar

Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var softplus(Var a);
Var clamp(Var a, double lo, double hi);

Var row_softmax(Var a);               // [R,C], per-row
Var logsumexp_vec(Var a);             // 1-D -> scalar
/// logsumexp over axis 1 of [B,M] -> [B] or [B,M,D] -> [B,D], with an
/// optional additive log-weight matrix [B,M].
Var logsumexp_axis1(Var a, const Tensor* log_weights = nullptr);

/// out[n,m,j] = log N(z[n,j]; mu[m,j], exp(logvar[m,j])) for [B,D] inputs.
Var gauss_logdens_pairs(Var z, Var mu, Var logvar);

/// Sum over elements of the stable binary cross-entropy from logits:
/// softplus(l) - t*l. Targets are constants in [0,1].
Var bce_logits_sum(Var logits, const Tensor& targets);

/// Log-normalizer of the continuous Bernoulli as a function of the logit.
Var cb_log_normalizer(Var logits);

Var add_rowvec(Var x, Var b);        // [B,N] + [N]
Var add_channel_bias(Var x, Var b);  // [B,C,H,W] + [C]

/// conv2d on NCHW input; w is [Cout, Cin*KH*KW].
Var conv2d(Var x, Var w, int kh, int kw, int stride, int pad);
/// Transposed conv2d on NCHW input; w is [Cin, Cout*KH*KW].
/// Output spatial size: (H-1)*stride - 2*pad + KH.
Var conv2d_transpose(Var x, Var w, int kh, int kw, int stride, int pad);

Var mse(Var a, Var b);  // mean of squared differences -> scalar

}  // namespace cfasl
