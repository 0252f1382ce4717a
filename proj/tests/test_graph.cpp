#include <doctest.h>

#include <cmath>

#include "graph.hpp"
#include "oracles.hpp"
#include "rng.hpp"

using namespace cfasl;

namespace {

// Finite-difference check of d(loss)/d(leaf) for a scalar-producing builder.
template <typename Builder>
void check_gradient(Tensor init, Builder build, double tol = 1e-6, double h = 1e-5) {
  Graph g;
  Var x = g.leaf(init);
  Var loss = build(g, x);
  g.backward(loss);
  Tensor analytic = g.grad(x);

  for (int64_t i = 0; i < init.numel(); ++i) {
    double orig = init[i];
    init[i] = orig + h;
    Graph gp;
    double fp = build(gp, gp.leaf(init)).item();
    init[i] = orig - h;
    Graph gm;
    double fm = build(gm, gm.leaf(init)).item();
    init[i] = orig;
    double fd = (fp - fm) / (2 * h);
    CAPTURE(i);
    CHECK(oracles::rel_err(analytic[i], fd) < tol);
  }
}

Tensor randn(std::vector<int64_t> shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST_CASE("rng determinism and ranges") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  Rng d(3);
  auto perm = d.permutation(10);
  std::vector<bool> seen(10, false);
  for (auto p : perm) seen[static_cast<size_t>(p)] = true;
  for (bool s : seen) CHECK(s);
}

TEST_CASE("rng state round trip") {
  Rng a(123);
  for (int i = 0; i < 17; ++i) a.normal();
  std::string s = a.state();
  Rng b(0);
  b.set_state(s);
  for (int i = 0; i < 50; ++i) CHECK(a.uniform() == b.uniform());
}

TEST_CASE("elementwise and reduction gradients") {
  Tensor x = randn({3, 4}, 1);
  check_gradient(x, [](Graph& g, Var v) { return sum(square(v)); });
  check_gradient(x, [](Graph& g, Var v) { return mean(exp(v)); });
  check_gradient(x, [](Graph& g, Var v) { return sum(sigmoid(v)); });
  check_gradient(x, [](Graph& g, Var v) { return sum(softplus(v)); });
  check_gradient(x, [](Graph& g, Var v) { return sum(mul(v, v)); });
  check_gradient(x, [](Graph& g, Var v) {
    return sum(div(v, add_scalar(square(v), 1.0)));
  });
  Tensor pos = Tensor::full({5}, 0.5);
  check_gradient(pos, [](Graph& g, Var v) { return sum(log(v)); });
  check_gradient(pos, [](Graph& g, Var v) { return sum(sqrt(v)); });
}

TEST_CASE("matmul, transpose, slice, concat gradients") {
  Tensor a = randn({3, 4}, 2);
  check_gradient(a, [](Graph& g, Var v) {
    Var b = g.constant(randn({4, 2}, 9));
    return sum(square(matmul(v, b)));
  });
  check_gradient(a, [](Graph& g, Var v) { return sum(square(transpose(v))); });
  check_gradient(a, [](Graph& g, Var v) {
    return sum(square(slice_block(v, 4, {4})));
  });
  check_gradient(a, [](Graph& g, Var v) {
    std::vector<Var> parts{slice_block(v, 0, {4}), slice_block(v, 8, {4})};
    return sum(square(concat_vec(parts)));
  });
  check_gradient(a, [](Graph& g, Var v) {
    std::vector<Var> parts{slice_block(v, 0, {1, 4}), slice_block(v, 4, {2, 4})};
    return sum(square(concat_rows(parts)));
  });
}

TEST_CASE("softmax and logsumexp gradients") {
  Tensor a = randn({2, 5}, 3);
  check_gradient(a, [](Graph& g, Var v) {
    Var s = row_softmax(v);
    Var w = g.constant(randn({2, 5}, 11));
    return sum(mul(s, w));
  });
  Tensor b = randn({6}, 4);
  check_gradient(b, [](Graph& g, Var v) { return logsumexp_vec(v); });
  Tensor c = randn({3, 4}, 5);
  check_gradient(c, [](Graph& g, Var v) { return sum(logsumexp_axis1(v)); });
  Tensor d = randn({2, 3, 4}, 6);
  Tensor lw = randn({2, 3}, 7, 0.3);
  check_gradient(d, [&lw](Graph& g, Var v) {
    return sum(logsumexp_axis1(v, &lw));
  });
}

TEST_CASE("row softmax rows sum to one") {
  Graph g;
  Var v = g.constant(randn({4, 7}, 8));
  Var s = row_softmax(v);
  for (int64_t r = 0; r < 4; ++r) {
    double total = 0;
    for (int64_t c = 0; c < 7; ++c) total += s.value()[r * 7 + c];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("max_lastdim value and subgradient") {
  Graph g;
  Var v = g.leaf(Tensor({2, 3}, {1.0, 5.0, 2.0, -1.0, -1.0, -7.0}));
  Var m = max_lastdim(v);
  CHECK(m.value()[0] == 5.0);
  CHECK(m.value()[1] == -1.0);
  g.backward(sum(m));
  Tensor grad = g.grad(v);
  // Ties route to the first argmax.
  CHECK(grad[1] == 1.0);
  CHECK(grad[3] == 1.0);
  CHECK(grad[4] == 0.0);
}

TEST_CASE("clamp gradient masks out-of-range input") {
  Graph g;
  Var v = g.leaf(Tensor({3}, {-2.0, 0.5, 2.0}));
  Var c = clamp(v, 0.0, 1.0);
  g.backward(sum(c));
  Tensor grad = g.grad(v);
  CHECK(grad[0] == 0.0);
  CHECK(grad[1] == 1.0);
  CHECK(grad[2] == 0.0);
}

TEST_CASE("bce_logits_sum matches naive formula and gradient") {
  Tensor logits = randn({2, 3}, 10);
  Tensor targets({2, 3}, {0.0, 1.0, 0.5, 1.0, 0.0, 0.25});
  Graph g;
  Var l = g.leaf(logits);
  Var loss = bce_logits_sum(l, targets);
  double naive = 0;
  for (int64_t i = 0; i < logits.numel(); ++i) {
    double p = 1.0 / (1.0 + std::exp(-logits[i]));
    naive += -(targets[i] * std::log(p) + (1 - targets[i]) * std::log(1 - p));
  }
  CHECK(loss.item() == doctest::Approx(naive).epsilon(1e-10));
  check_gradient(logits, [&targets](Graph& gr, Var v) {
    return bce_logits_sum(v, targets);
  });
}

TEST_CASE("gauss_logdens_pairs matches direct density and gradients") {
  Tensor z = randn({3, 2}, 20);
  Tensor mu = randn({3, 2}, 21);
  Tensor lv = randn({3, 2}, 22, 0.5);
  Graph g;
  Var out = gauss_logdens_pairs(g.constant(z), g.constant(mu), g.constant(lv));
  for (int64_t n = 0; n < 3; ++n)
    for (int64_t m = 0; m < 3; ++m)
      for (int64_t j = 0; j < 2; ++j) {
        double var = std::exp(lv[m * 2 + j]);
        double d = z[n * 2 + j] - mu[m * 2 + j];
        double want = -0.5 * std::log(2 * M_PI * var) - 0.5 * d * d / var;
        CHECK(out.value()[(n * 3 + m) * 2 + j] == doctest::Approx(want).epsilon(1e-10));
      }

  check_gradient(z, [&](Graph& gr, Var v) {
    return sum(gauss_logdens_pairs(v, gr.constant(mu), gr.constant(lv)));
  });
  check_gradient(mu, [&](Graph& gr, Var v) {
    return sum(gauss_logdens_pairs(gr.constant(z), v, gr.constant(lv)));
  });
  check_gradient(lv, [&](Graph& gr, Var v) {
    return sum(gauss_logdens_pairs(gr.constant(z), gr.constant(mu), v));
  });
}

TEST_CASE("conv2d gradient check") {
  Tensor x = randn({2, 2, 5, 5}, 30, 0.5);
  Tensor w = randn({3, 2 * 3 * 3}, 31, 0.5);
  check_gradient(x, [&w](Graph& g, Var v) {
    return sum(square(conv2d(v, g.constant(w), 3, 3, 2, 1)));
  });
  check_gradient(w, [&x](Graph& g, Var v) {
    return sum(square(conv2d(g.constant(x), v, 3, 3, 2, 1)));
  });
}

TEST_CASE("conv2d_transpose gradient check and shape") {
  Tensor x = randn({2, 3, 4, 4}, 32, 0.5);
  Tensor w = randn({3, 2 * 4 * 4}, 33, 0.5);
  {
    Graph g;
    Var y = conv2d_transpose(g.constant(x), g.constant(w), 4, 4, 2, 1);
    CHECK(y.shape() == std::vector<int64_t>{2, 2, 8, 8});
  }
  check_gradient(x, [&w](Graph& g, Var v) {
    return sum(square(conv2d_transpose(v, g.constant(w), 4, 4, 2, 1)));
  }, 1e-5);
  check_gradient(w, [&x](Graph& g, Var v) {
    return sum(square(conv2d_transpose(g.constant(x), v, 4, 4, 2, 1)));
  }, 1e-5);
}

TEST_CASE("conv transpose inverts conv shapes") {
  // 16 -> 8 -> 16 with k=4, s=2, p=1.
  Tensor x = randn({1, 1, 16, 16}, 34);
  Tensor wc = randn({4, 1 * 4 * 4}, 35, 0.3);
  Tensor wt = randn({4, 1 * 4 * 4}, 36, 0.3);
  Graph g;
  Var h = conv2d(g.constant(x), g.constant(wc), 4, 4, 2, 1);
  CHECK(h.shape() == std::vector<int64_t>{1, 4, 8, 8});
  Var y = conv2d_transpose(h, g.constant(wt), 4, 4, 2, 1);
  CHECK(y.shape() == std::vector<int64_t>{1, 1, 16, 16});
}

TEST_CASE("bias broadcast gradients") {
  Tensor x = randn({3, 4}, 40);
  Tensor b = randn({4}, 41);
  check_gradient(b, [&x](Graph& g, Var v) {
    return sum(square(add_rowvec(g.constant(x), v)));
  });
  Tensor xc = randn({2, 3, 2, 2}, 42);
  Tensor bc = randn({3}, 43);
  check_gradient(bc, [&xc](Graph& g, Var v) {
    return sum(square(add_channel_bias(g.constant(xc), v)));
  });
}

TEST_CASE("scale_by and dot gradients") {
  Tensor a = randn({4}, 50);
  Tensor s = Tensor::scalar(1.7);
  check_gradient(a, [&s](Graph& g, Var v) {
    return sum(square(scale_by(v, g.constant(s))));
  });
  check_gradient(s, [&a](Graph& g, Var v) {
    return sum(square(scale_by(g.constant(a), v)));
  });
  Tensor b = randn({4}, 51);
  check_gradient(a, [&b](Graph& g, Var v) {
    return square(dot(v, g.constant(b)));
  });
}

TEST_CASE("cb_log_normalizer continuity and gradient") {
  // At logit 0 the continuous Bernoulli normalizer is exactly 2.
  Graph g;
  Var v = g.constant(Tensor({1}, {0.0}));
  CHECK(cb_log_normalizer(v).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  Tensor x({5}, {-3.0, -0.5, 1e-5, 0.5, 3.0});
  check_gradient(x, [](Graph& gr, Var vv) { return sum(cb_log_normalizer(vv)); },
                 1e-4);
}

TEST_CASE("constants receive no gradient buffers") {
  Graph g;
  Var c = g.constant(randn({3}, 60));
  Var x = g.leaf(randn({3}, 61));
  Var loss = sum(mul(c, x));
  g.backward(loss);
  CHECK(!g.has_grad(c));
  CHECK(g.has_grad(x));
}
