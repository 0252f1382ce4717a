#include <doctest.h>

#include <cmath>

#include "equivariance.hpp"
#include "expm.hpp"
#include "oracles.hpp"
#include "rng.hpp"

using namespace cfasl;

namespace {

Tensor randn(std::vector<int64_t> shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST_CASE("encoder equivariance loss identities") {
  const int64_t d = 5;
  Tensor alg = randn({d, d}, 1, 0.3);
  Tensor z1t = randn({d}, 2);

  // z2 = g z1 makes the loss vanish for any g.
  {
    Graph g;
    Var algebra = g.constant(alg);
    Var gmat = graph_expm(algebra);
    Var z1 = g.constant(z1t);
    Var z2 = reshape(matmul(gmat, reshape(z1, {d, 1})), {d});
    double loss = encoder_equiv_loss(g, z1, z2, algebra).item();
    CHECK(loss < 1e-10);
  }
  // Identity symmetry with equal latents.
  {
    Graph g;
    Var algebra = g.constant(Tensor({d, d}));
    Var z1 = g.constant(z1t);
    CHECK(encoder_equiv_loss(g, z1, z1, algebra).item() == 0.0);
  }
  // Identity symmetry, z1 - z2 = e0, D = 10: MSE is 1/10.
  {
    Graph g;
    Tensor a({10}, {1, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    Tensor b({10});
    Var algebra = g.constant(Tensor({10, 10}));
    double loss = encoder_equiv_loss(g, g.constant(a), g.constant(b), algebra).item();
    CHECK(loss == doctest::Approx(0.1).epsilon(1e-12));
  }
}

TEST_CASE("encoder equivariance never inverts numerically") {
  // The inverse comes from exp(-A); check against applying exp(A) forward.
  const int64_t d = 4;
  Tensor alg = randn({d, d}, 3, 0.4);
  Graph g;
  Var algebra = g.leaf(alg);
  Var z1 = g.constant(randn({d}, 4));
  Var z2 = g.constant(randn({d}, 5));
  Var loss = encoder_equiv_loss(g, z1, z2, algebra);
  CHECK(loss.item() > 0);
  g.backward(loss);
  CHECK(g.grad(algebra).all_finite());
}

TEST_CASE("decoder equivariance loss values") {
  // All-zero decode against x2 with mean pixel 0.25: loss = mean of x2^2.
  Graph g;
  Tensor x2({1, 1, 2, 2}, {0.25, 0.25, 0.25, 0.25});
  Var decoded = g.constant(Tensor({1, 1, 2, 2}));
  CHECK(decoder_equiv_loss(g, decoded, x2).item() ==
        doctest::Approx(0.0625).epsilon(1e-12));
  // Matching images.
  Var same = g.constant(x2);
  CHECK(decoder_equiv_loss(g, same, x2).item() == 0.0);
}

TEST_CASE("total objective masks and weights") {
  Graph g;
  ObjectiveTerms terms;
  terms.vae = g.constant(Tensor::scalar(2.0));
  terms.parallel = g.constant(Tensor::scalar(0.5));
  terms.perpendicular = g.constant(Tensor::scalar(0.25));
  terms.sparsity = g.constant(Tensor::scalar(0.125));
  terms.commutative = g.constant(Tensor::scalar(1.5));
  terms.prediction = g.constant(Tensor::scalar(0.75));
  terms.encoder_equiv = g.constant(Tensor::scalar(0.3));
  terms.decoder_equiv = g.constant(Tensor::scalar(0.7));

  LossWeights w;
  w.epsilon = 0.1;

  // All off: only the VAE term remains (the plain beta-VAE configuration).
  {
    TotalObjective t = total_objective(g, terms, w, AblationMask::all_off());
    CHECK(t.breakdown.total == doctest::Approx(2.0).epsilon(1e-12));
  }
  // All on: unit-weighted codebook terms plus epsilon-scaled decoder term.
  {
    TotalObjective t = total_objective(g, terms, w, AblationMask::all_on());
    double want = 2.0 + 0.5 + 0.25 + 0.125 + 1.5 + 0.75 + 0.3 + 0.1 * 0.7;
    CHECK(t.breakdown.total == doctest::Approx(want).epsilon(1e-12));
    CHECK(t.breakdown.weights.at("decoder_equiv") == doctest::Approx(0.1));
  }
  // epsilon = 0 removes the decoder term.
  {
    LossWeights w0 = w;
    w0.epsilon = 0.0;
    TotalObjective t = total_objective(g, terms, w0, AblationMask::all_on());
    double want = 2.0 + 0.5 + 0.25 + 0.125 + 1.5 + 0.75 + 0.3;
    CHECK(t.breakdown.total == doctest::Approx(want).epsilon(1e-12));
  }
  // Negative epsilon is rejected.
  {
    LossWeights bad = w;
    bad.epsilon = -0.1;
    CHECK_THROWS_AS(total_objective(g, terms, bad, AblationMask::all_on()), Error);
  }
}

TEST_CASE("every ablation-table mask row is constructible") {
  // The study toggles prediction, commutative, equivariance, parallel,
  // perpendicular, sparsity; spot-check representative rows plus the
  // dedicated all-off/all-on rows.
  const std::vector<std::map<std::string, bool>> rows = {
      {{"prediction", false}, {"commutative", false}, {"equivariance", false},
       {"parallel", false}, {"perpendicular", false}, {"sparsity", false}},
      {{"prediction", false}},
      {{"equivariance", false}},
      {{"parallel", false}},
      {{"perpendicular", false}},
      {{"parallel", false}, {"perpendicular", false}, {"sparsity", false}},
      {{"sparsity", false}},
      {} /* full method */};
  for (const auto& row : rows) {
    AblationMask mask = AblationMask::from_map(row);
    auto m = mask.to_map();
    for (const auto& [k, v] : row) CHECK(m.at(k) == v);
  }
  CHECK_THROWS_AS(AblationMask::from_map({{"bogus_loss", true}}), Error);
}

TEST_CASE("masking a loss zeroes its gradient contribution") {
  // The masked term's input receives no gradient; the unmasked one does.
  Graph g;
  Var theta = g.leaf(Tensor::scalar(0.8));
  ObjectiveTerms terms;
  terms.vae = g.constant(Tensor::scalar(1.0));
  terms.parallel = square(theta);
  terms.perpendicular = g.constant(Tensor::scalar(0.0));
  terms.sparsity = g.constant(Tensor::scalar(0.0));
  terms.commutative = g.constant(Tensor::scalar(0.0));
  terms.prediction = g.constant(Tensor::scalar(0.0));
  terms.encoder_equiv = g.constant(Tensor::scalar(0.0));
  terms.decoder_equiv = g.constant(Tensor::scalar(0.0));

  AblationMask off = AblationMask::all_on();
  off.parallel = false;
  TotalObjective masked = total_objective(g, terms, LossWeights{}, off);
  g.backward(masked.total);
  CHECK(g.grad(theta)[0] == 0.0);

  Graph g2;
  Var theta2 = g2.leaf(Tensor::scalar(0.8));
  ObjectiveTerms terms2 = terms;
  terms2.vae = g2.constant(Tensor::scalar(1.0));
  terms2.parallel = square(theta2);
  terms2.perpendicular = g2.constant(Tensor::scalar(0.0));
  terms2.sparsity = g2.constant(Tensor::scalar(0.0));
  terms2.commutative = g2.constant(Tensor::scalar(0.0));
  terms2.prediction = g2.constant(Tensor::scalar(0.0));
  terms2.encoder_equiv = g2.constant(Tensor::scalar(0.0));
  terms2.decoder_equiv = g2.constant(Tensor::scalar(0.0));
  TotalObjective open = total_objective(g2, terms2, LossWeights{}, AblationMask::all_on());
  g2.backward(open.total);
  CHECK(g2.grad(theta2)[0] == doctest::Approx(1.6).epsilon(1e-12));
}

TEST_CASE("total is linear in each component") {
  Graph g;
  auto mk = [&](double v) { return g.constant(Tensor::scalar(v)); };
  ObjectiveTerms a{mk(1), mk(2), mk(3), mk(4), mk(5), mk(6), mk(7), mk(8)};
  ObjectiveTerms b{mk(1), mk(20), mk(3), mk(4), mk(5), mk(6), mk(7), mk(8)};
  LossWeights w;
  double ta = total_objective(g, a, w, AblationMask::all_on()).breakdown.total;
  double tb = total_objective(g, b, w, AblationMask::all_on()).breakdown.total;
  CHECK(tb - ta == doctest::Approx(18.0 * w.parallel).epsilon(1e-12));
}

TEST_CASE("equivariance losses: gradients match finite differences") {
  const int64_t d = 3;
  Tensor alg0 = randn({d, d}, 7, 0.3);
  Tensor z1t = randn({d}, 8);
  Tensor z2t = randn({d}, 9);

  auto ee_value = [&](const Tensor& alg) {
    Graph g;
    return encoder_equiv_loss(g, g.constant(z1t), g.constant(z2t), g.leaf(alg)).item();
  };
  Graph g;
  Var algebra = g.leaf(alg0);
  Var loss = encoder_equiv_loss(g, g.constant(z1t), g.constant(z2t), algebra);
  g.backward(loss);
  Tensor analytic = g.grad(algebra);
  Rng pick(10);
  for (int trial = 0; trial < 20; ++trial) {
    int64_t idx = pick.below(d * d);
    double h = 1e-4;
    Tensor ap = alg0, am = alg0;
    ap[idx] += h;
    am[idx] -= h;
    double fd = (ee_value(ap) - ee_value(am)) / (2 * h);
    CHECK(oracles::rel_err(analytic[idx], fd) < 1e-3);
  }

  // Decoder-side: gradient w.r.t. the pre-decode latents through an
  // arbitrary differentiable stand-in decoder (sigmoid of a linear map).
  Tensor wdec = randn({d, 16}, 11, 0.4);
  Tensor x2 = Tensor::full({1, 1, 4, 4}, 0.3);
  auto de_value = [&](const Tensor& zrow) {
    Graph g2;
    Var z = g2.leaf(zrow);
    Var img = reshape(sigmoid(matmul(z, g2.constant(wdec))), {1, 1, 4, 4});
    return decoder_equiv_loss(g2, img, x2).item();
  };
  Tensor z0 = randn({1, d}, 12);
  Graph g2;
  Var z = g2.leaf(z0);
  Var img = reshape(sigmoid(matmul(z, g2.constant(wdec))), {1, 1, 4, 4});
  Var dloss = decoder_equiv_loss(g2, img, x2);
  g2.backward(dloss);
  Tensor danalytic = g2.grad(z);
  for (int64_t idx = 0; idx < d; ++idx) {
    double h = 1e-4;
    Tensor zp = z0, zm = z0;
    zp[idx] += h;
    zm[idx] -= h;
    double fd = (de_value(zp) - de_value(zm)) / (2 * h);
    CHECK(oracles::rel_err(danalytic[idx], fd) < 1e-3);
  }
}
