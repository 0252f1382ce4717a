#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "vae.hpp"

using namespace cfasl;

namespace {

Tensor randn(std::vector<int64_t> shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

Tensor rand01(std::vector<int64_t> shape, uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("make_pair_batch splits into disjoint halves covering the batch") {
  Tensor batch({64, 1, 2, 2});
  for (int64_t i = 0; i < 64; ++i)
    for (int64_t j = 0; j < 4; ++j) batch[i * 4 + j] = static_cast<double>(i);
  Rng rng(5);
  PairBatch pb = make_pair_batch(batch, rng);
  CHECK(pb.first_half.dim(0) == 32);
  CHECK(pb.second_half.dim(0) == 32);
  std::vector<int> seen(64, 0);
  for (int64_t i = 0; i < 32; ++i) {
    ++seen[static_cast<int>(pb.first_half[i * 4])];
    ++seen[static_cast<int>(pb.second_half[i * 4])];
  }
  // Union of halves is the original multiset: every sample exactly once.
  for (int v : seen) CHECK(v == 1);
}

TEST_CASE("make_pair_batch minimal batch and determinism") {
  Tensor two({2, 1, 1, 1}, {5.0, 9.0});
  Rng rng(1);
  PairBatch pb = make_pair_batch(two, rng);
  CHECK(pb.first_half.numel() == 1);
  CHECK(pb.second_half.numel() == 1);
  CHECK(pb.first_half[0] + pb.second_half[0] == 14.0);

  Tensor batch = rand01({8, 1, 2, 2}, 3);
  Rng a(7), b(7);
  PairBatch p1 = make_pair_batch(batch, a);
  PairBatch p2 = make_pair_batch(batch, b);
  CHECK(p1.permutation == p2.permutation);

  Tensor odd({3, 1, 1, 1});
  Rng c(0);
  CHECK_THROWS_AS(make_pair_batch(odd, c), Error);
}

TEST_CASE("reparameterize: zero noise returns the mean") {
  Graph g;
  EncoderOutput out;
  out.mu = g.leaf(randn({4, 3}, 11));
  out.log_var = g.leaf(randn({4, 3}, 12, 0.3));
  Tensor eta({4, 3});  // zeros
  Var z = reparameterize(g, out, eta);
  for (int64_t i = 0; i < 12; ++i)
    CHECK(z.value()[i] == g.value(out.mu)[i]);
}

TEST_CASE("encoder/decoder shapes round-trip at 16 and 64") {
  for (int size : {16, 64}) {
    ParamStore store;
    Rng rng(21);
    ConvEncoder enc(store, size, 1, 10, rng);
    ConvDecoder dec(store, size, 1, 10, rng);
    Graph g;
    std::vector<Var> params = stage_params(g, store);
    Tensor images = rand01({2, 1, size, size}, 22);
    EncoderOutput out = enc.forward(params, g.constant(images));
    CHECK(g.value(out.mu).shape() == std::vector<int64_t>{2, 10});
    CHECK(g.value(out.log_var).shape() == std::vector<int64_t>{2, 10});
    Var logits = dec.forward_logits(params, out.mu);
    CHECK(logits.shape() == std::vector<int64_t>{2, 1, size, size});
  }
}

TEST_CASE("encoder is deterministic given weights and input") {
  ParamStore store;
  Rng rng(31);
  ConvEncoder enc(store, 16, 1, 6, rng);
  Tensor images = rand01({3, 1, 16, 16}, 32);
  auto run = [&] {
    Graph g;
    std::vector<Var> params = stage_params(g, store);
    EncoderOutput out = enc.forward(params, g.constant(images));
    return g.value(out.mu);
  };
  Tensor a = run(), b = run();
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("beta-VAE ELBO: KL closed form and beta behavior") {
  // mu = 0, log_var = 0: KL term is zero, so beta has no effect.
  {
    Graph g;
    EncoderOutput out;
    out.mu = g.constant(Tensor({1, 2}));
    out.log_var = g.constant(Tensor({1, 2}));
    Tensor x = rand01({1, 1, 4, 4}, 41);
    Var logits = g.constant(randn({1, 1, 4, 4}, 42));
    double l0 = elbo_beta_vae(g, logits, x, out, 0.0).item();
    double l4 = elbo_beta_vae(g, logits, x, out, 4.0).item();
    CHECK(l0 == doctest::Approx(l4).epsilon(1e-12));
  }
  // KL for mu=(1,0), log_var=(0,0) is 0.5 by the closed form.
  {
    Graph g;
    EncoderOutput out;
    out.mu = g.constant(Tensor({1, 2}, {1.0, 0.0}));
    out.log_var = g.constant(Tensor({1, 2}));
    Tensor x = rand01({1, 1, 4, 4}, 43);
    Var logits = g.constant(randn({1, 1, 4, 4}, 44));
    double l0 = elbo_beta_vae(g, logits, x, out, 0.0).item();
    double l1 = elbo_beta_vae(g, logits, x, out, 1.0).item();
    CHECK(l1 - l0 == doctest::Approx(0.5).epsilon(1e-9));
    Eigen::VectorXd mu(2), lv(2);
    mu << 1, 0;
    lv << 0, 0;
    CHECK(oracles::gaussian_kl(mu, lv) == doctest::Approx(0.5));
  }
  // beta = 0 equals the pure reconstruction cross-entropy.
  {
    Graph g;
    EncoderOutput out;
    out.mu = g.constant(randn({2, 3}, 45));
    out.log_var = g.constant(randn({2, 3}, 46, 0.2));
    Tensor x = rand01({2, 1, 4, 4}, 47);
    Var logits = g.constant(randn({2, 1, 4, 4}, 48));
    double want = bce_logits_sum(logits, x).item() / 2.0;
    CHECK(elbo_beta_vae(g, logits, x, out, 0.0).item() ==
          doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("both ELBO gradients match finite differences w.r.t. encoder outputs") {
  const int64_t b = 4, d = 3;
  Tensor mu0 = randn({b, d}, 51, 0.8);
  Tensor lv0 = randn({b, d}, 52, 0.3);
  Tensor x = rand01({b, 1, 4, 4}, 53);
  Tensor logits0 = randn({b, 1, 4, 4}, 54);
  Tensor eta = randn({b, d}, 55);

  ObjectiveConfig tc;
  tc.kind = ObjectiveConfig::Kind::beta_tcvae;
  tc.beta = 3.0;
  tc.dataset_size = 100;

  for (bool tcvae : {false, true}) {
    auto value = [&](const Tensor& mu, const Tensor& lv) {
      Graph g;
      EncoderOutput out{g.leaf(mu), g.leaf(lv)};
      Var logits = g.constant(logits0);
      if (!tcvae) return elbo_beta_vae(g, logits, x, out, 2.0).item();
      Var z = reparameterize(g, out, eta);
      return elbo_beta_tcvae(g, logits, x, out, z, tc).item();
    };
    Graph g;
    EncoderOutput out{g.leaf(mu0), g.leaf(lv0)};
    Var logits = g.constant(logits0);
    Var loss;
    if (!tcvae) {
      loss = elbo_beta_vae(g, logits, x, out, 2.0);
    } else {
      Var z = reparameterize(g, out, eta);
      loss = elbo_beta_tcvae(g, logits, x, out, z, tc);
    }
    g.backward(loss);
    Tensor gmu = g.grad(out.mu);
    Tensor glv = g.grad(out.log_var);

    Rng pick(56);
    for (int trial = 0; trial < 20; ++trial) {
      int64_t idx = pick.below(b * d);
      double h = 1e-4;
      Tensor mp = mu0, mm = mu0;
      mp[idx] += h;
      mm[idx] -= h;
      double fd = (value(mp, lv0) - value(mm, lv0)) / (2 * h);
      CAPTURE(tcvae);
      CHECK(oracles::rel_err(gmu[idx], fd) < 1e-3);
      Tensor lp = lv0, lm = lv0;
      lp[idx] += h;
      lm[idx] -= h;
      fd = (value(mu0, lp) - value(mu0, lm)) / (2 * h);
      CHECK(oracles::rel_err(glv[idx], fd) < 1e-3);
    }
  }
}

TEST_CASE("reconstruction and KL terms are non-negative") {
  Graph g;
  EncoderOutput out;
  out.mu = g.constant(randn({2, 3}, 61));
  out.log_var = g.constant(randn({2, 3}, 62, 0.4));
  Tensor x = rand01({2, 1, 4, 4}, 63);
  Var logits = g.constant(randn({2, 1, 4, 4}, 64));
  double recon = elbo_beta_vae(g, logits, x, out, 0.0).item();
  double with_kl = elbo_beta_vae(g, logits, x, out, 1.0).item();
  CHECK(recon >= 0.0);
  CHECK(with_kl >= recon);  // KL adds a non-negative amount
}

TEST_CASE("TCVAE penalty telescopes to the single-sample KL estimate") {
  // With alpha = beta = gamma = 1 the sum MI + TC + DWKL collapses to
  // E[log q(z|x) - log p(z)], whose batch average tracks the closed-form
  // Gaussian KL in expectation.
  const int64_t b = 16, d = 4;
  Rng rng(71);
  double acc_est = 0, acc_closed = 0;
  const int batches = 100;
  for (int t = 0; t < batches; ++t) {
    Tensor mu = randn({b, d}, 1000 + t, 0.7);
    Tensor lv = randn({b, d}, 2000 + t, 0.3);
    Tensor eta = sample_eta(b, d, rng);
    Graph g;
    EncoderOutput out{g.constant(mu), g.constant(lv)};
    Var z = reparameterize(g, out, eta);
    TcvaeTerms terms = tcvae_terms(g, out, z, 977);
    acc_est += terms.mutual_information.item() + terms.total_correlation.item() +
               terms.dimension_kl.item();
    double closed = 0;
    for (int64_t r = 0; r < b; ++r) {
      Eigen::VectorXd m(d), l(d);
      for (int64_t c = 0; c < d; ++c) {
        m[c] = mu[r * d + c];
        l[c] = lv[r * d + c];
      }
      closed += oracles::gaussian_kl(m, l);
    }
    acc_closed += closed / static_cast<double>(b);
  }
  acc_est /= batches;
  acc_closed /= batches;
  CHECK(std::abs(acc_est - acc_closed) / std::abs(acc_closed) < 0.05);
}

TEST_CASE("TC estimate vanishes when every posterior is identical") {
  // Identical per-dimension posteriors make the aggregate factorize; the
  // importance-weighted estimator recovers exactly zero total correlation.
  const int64_t b = 8, d = 3;
  Tensor mu({b, d});
  Tensor lv({b, d});
  for (int64_t r = 0; r < b; ++r)
    for (int64_t c = 0; c < d; ++c) {
      mu[r * d + c] = 0.3 * static_cast<double>(c);
      lv[r * d + c] = -0.2;
    }
  Rng rng(81);
  Tensor eta = sample_eta(b, d, rng);
  Graph g;
  EncoderOutput out{g.constant(mu), g.constant(lv)};
  Var z = reparameterize(g, out, eta);
  TcvaeTerms terms = tcvae_terms(g, out, z, 737280);
  CHECK(std::abs(terms.total_correlation.item()) < 1e-9);
}

TEST_CASE("TCVAE with beta = 0 drops exactly the TC term") {
  const int64_t b = 6, d = 3;
  Tensor mu = randn({b, d}, 97, 0.6);
  Tensor lv = randn({b, d}, 98, 0.3);
  Tensor x = rand01({b, 1, 4, 4}, 99);
  Tensor logits = randn({b, 1, 4, 4}, 100);
  Rng rng(101);
  Tensor eta = sample_eta(b, d, rng);

  ObjectiveConfig cfg;
  cfg.kind = ObjectiveConfig::Kind::beta_tcvae;
  cfg.beta = 0.0;
  cfg.dataset_size = 64;

  Graph g;
  EncoderOutput out{g.constant(mu), g.constant(lv)};
  Var z = reparameterize(g, out, eta);
  Var lg = g.constant(logits);
  double with_beta0 = elbo_beta_tcvae(g, lg, x, out, z, cfg).item();
  TcvaeTerms terms = tcvae_terms(g, out, z, cfg.dataset_size);
  double recon = bce_logits_sum(lg, x).item() / static_cast<double>(b);
  double want = recon + terms.mutual_information.item() + terms.dimension_kl.item();
  CHECK(with_beta0 == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("TCVAE rejects a batch of one and missing dataset size") {
  Graph g;
  EncoderOutput out{g.constant(randn({1, 3}, 91)), g.constant(randn({1, 3}, 92))};
  Var z = out.mu;
  CHECK_THROWS_AS(tcvae_terms(g, out, z, 100), Error);
  EncoderOutput out2{g.constant(randn({4, 3}, 93)), g.constant(randn({4, 3}, 94))};
  CHECK_THROWS_AS(tcvae_terms(g, out2, out2.mu, 0), Error);
}

TEST_CASE("continuous Bernoulli likelihood shifts the reconstruction term") {
  Graph g;
  EncoderOutput out;
  out.mu = g.constant(Tensor({1, 2}));
  out.log_var = g.constant(Tensor({1, 2}));
  Tensor x = rand01({1, 1, 4, 4}, 95);
  Var logits = g.constant(randn({1, 1, 4, 4}, 96));
  double bern = elbo_beta_vae(g, logits, x, out, 0.0).item();
  double cb = elbo_beta_vae(g, logits, x, out, 0.0,
                            ObjectiveConfig::Likelihood::continuous_bernoulli)
                  .item();
  // The CB normalizer C(lambda) >= 2 makes the negative log-likelihood smaller.
  CHECK(cb < bern);
}
