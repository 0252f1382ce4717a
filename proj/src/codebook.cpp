#include "codebook.hpp"

#include <cmath>

namespace cfasl {

Eigen::MatrixXd SymmetryCodebook::generator(int64_t i, int64_t j) const {
  const int64_t d = latent_dim;
  Eigen::MatrixXd out(d, d);
  const double* src = generators.data() + flat_index(i, j) * d * d;
  for (int64_t r = 0; r < d; ++r)
    for (int64_t c = 0; c < d; ++c) out(r, c) = src[r * d + c];
  return out;
}

void SymmetryCodebook::set_generator(int64_t i, int64_t j, const Eigen::MatrixXd& g) {
  CFASL_CHECK_ARG(g.rows() == latent_dim && g.cols() == latent_dim,
                  "set_generator: dimension mismatch");
  const int64_t d = latent_dim;
  double* dst = generators.data() + flat_index(i, j) * d * d;
  for (int64_t r = 0; r < d; ++r)
    for (int64_t c = 0; c < d; ++c) dst[r * d + c] = g(r, c);
}

GroupElement SymmetryCodebook::group_element(int64_t i, int64_t j) const {
  return make_group_element(generator(i, j));
}

SymmetryCodebook init_codebook(int64_t num_sections, int64_t elements_per_section,
                               int64_t latent_dim, double scale, uint64_t seed) {
  CFASL_CHECK_ARG(num_sections >= 1, "init_codebook: num_sections must be >= 1");
  CFASL_CHECK_ARG(elements_per_section >= 1,
                  "init_codebook: elements_per_section must be >= 1");
  CFASL_CHECK_ARG(latent_dim >= 1, "init_codebook: latent_dim must be >= 1");
  CFASL_CHECK_ARG(scale >= 0, "init_codebook: scale must be non-negative");
  SymmetryCodebook cb;
  cb.num_sections = num_sections;
  cb.elements_per_section = elements_per_section;
  cb.latent_dim = latent_dim;
  cb.generators = Tensor({num_sections, elements_per_section, latent_dim, latent_dim});
  Rng rng(seed);
  const double stddev = scale / static_cast<double>(latent_dim);
  for (int64_t i = 0; i < cb.generators.numel(); ++i)
    cb.generators[i] = rng.normal(0.0, stddev);
  return cb;
}

StagedCodebook stage_codebook(Graph& g, Var generators, int64_t num_sections,
                              int64_t elements_per_section, int64_t latent_dim,
                              bool with_exponentials) {
  const Tensor& gv = g.value(generators);
  CFASL_CHECK_ARG(gv.numel() ==
                      num_sections * elements_per_section * latent_dim * latent_dim,
                  "stage_codebook: generator tensor size mismatch");
  StagedCodebook st;
  st.num_sections = num_sections;
  st.elements_per_section = elements_per_section;
  st.latent_dim = latent_dim;
  st.generators = generators;
  const int64_t dd = latent_dim * latent_dim;
  for (int64_t f = 0; f < num_sections * elements_per_section; ++f) {
    Var a = slice_block(generators, f * dd, {latent_dim, latent_dim});
    st.algebra.push_back(a);
    if (with_exponentials) st.group.push_back(graph_expm(a));
  }
  return st;
}

StagedCodebook stage_codebook(Graph& g, const SymmetryCodebook& cb) {
  return stage_codebook(g, g.leaf(cb.generators), cb.num_sections,
                        cb.elements_per_section, cb.latent_dim);
}

LatentChanges latent_changes(Graph& g, const StagedCodebook& cb, Var z) {
  const Tensor& zv = g.value(z);
  CFASL_CHECK_ARG(zv.numel() == cb.latent_dim, "latent_changes: dimension mismatch");
  CFASL_CHECK_ARG(zv.all_finite(), "latent_changes: non-finite latent");
  Var zcol = reshape(z, {cb.latent_dim, 1});
  LatentChanges ch;
  const int64_t n = cb.num_sections * cb.elements_per_section;
  ch.delta.reserve(static_cast<size_t>(n));
  for (int64_t f = 0; f < n; ++f) {
    Var moved = matmul(cb.group[static_cast<size_t>(f)], zcol);
    Var delta = reshape(sub(zcol, moved), {cb.latent_dim});
    ch.delta.push_back(delta);
    double nval = std::sqrt(g.value(delta).vec().squaredNorm());
    ch.degenerate.push_back(nval < kDegenerateNorm);
    ch.norm.push_back(sqrt(dot(delta, delta)));
  }
  return ch;
}

namespace {

Var cosine(Graph& g, const LatentChanges& ch, int64_t a, int64_t b) {
  (void)g;
  Var num = dot(ch.delta[static_cast<size_t>(a)], ch.delta[static_cast<size_t>(b)]);
  Var den = mul(ch.norm[static_cast<size_t>(a)], ch.norm[static_cast<size_t>(b)]);
  return div(num, den);
}

Var sum_or_zero(Graph& g, std::vector<Var>& terms) {
  if (terms.empty()) return g.constant(Tensor::scalar(0.0));
  return sum(concat_vec(terms));
}

}  // namespace

Var parallel_loss(Graph& g, const StagedCodebook& cb, const LatentChanges& ch,
                  int64_t pair_budget, Rng* rng) {
  CFASL_CHECK_ARG(pair_budget >= 1, "parallel_loss: pair_budget must be >= 1");
  const int64_t ss = cb.elements_per_section;
  std::vector<Var> terms;
  for (int64_t i = 0; i < cb.num_sections; ++i) {
    std::vector<std::pair<int64_t, int64_t>> pairs;
    if (ss <= kExhaustivePairLimit) {
      for (int64_t j = 0; j < ss; ++j)
        for (int64_t k = j + 1; k < ss; ++k) pairs.emplace_back(j, k);
    } else {
      CFASL_CHECK_ARG(rng != nullptr, "parallel_loss: rng required for subsampling");
      for (int64_t p = 0; p < pair_budget; ++p) {
        int64_t j = rng->below(ss);
        int64_t k = rng->below(ss - 1);
        if (k >= j) ++k;
        pairs.emplace_back(std::min(j, k), std::max(j, k));
      }
    }
    for (auto [j, k] : pairs) {
      int64_t a = cb.elements_per_section * i + j;
      int64_t b = cb.elements_per_section * i + k;
      if (ch.degenerate[static_cast<size_t>(a)] || ch.degenerate[static_cast<size_t>(b)])
        continue;
      Var c = clamp(cosine(g, ch, a, b), kCosineClampEps, 1.0);
      terms.push_back(neg(log(c)));
    }
  }
  return sum_or_zero(g, terms);
}

PerpDraws draw_perpendicular_pairs(int64_t num_sections, int64_t elements_per_section,
                                   int64_t pairs_per_step, Rng& rng) {
  CFASL_CHECK_ARG(num_sections >= 2, "perpendicular pairs: needs at least 2 sections");
  CFASL_CHECK_ARG(pairs_per_step >= 1, "perpendicular pairs: pairs_per_step must be >= 1");
  PerpDraws draws;
  for (int64_t i = 0; i < num_sections; ++i)
    for (int64_t k = i + 1; k < num_sections; ++k)
      for (int64_t p = 0; p < pairs_per_step; ++p)
        draws.push_back({i, k, rng.below(elements_per_section),
                         rng.below(elements_per_section)});
  return draws;
}

Var perpendicular_loss(Graph& g, const StagedCodebook& cb, const LatentChanges& ch,
                       const PerpDraws& draws, PerpForm form) {
  CFASL_CHECK_ARG(cb.num_sections >= 2, "perpendicular_loss: needs at least 2 sections");
  const int64_t ss = cb.elements_per_section;
  std::vector<Var> terms;
  for (const auto& [i, k, j, l] : draws) {
    int64_t a = ss * i + j;
    int64_t b = ss * k + l;
    if (ch.degenerate[static_cast<size_t>(a)] || ch.degenerate[static_cast<size_t>(b)])
      continue;
    Var c = cosine(g, ch, a, b);
    if (form == PerpForm::cos_sq) {
      terms.push_back(square(c));
    } else {
      // |cos| as sqrt(cos^2 + eps) keeps the subgradient bounded at 0.
      terms.push_back(sqrt(add_scalar(square(c), 1e-12)));
    }
  }
  return sum_or_zero(g, terms);
}

Var perpendicular_loss(Graph& g, const StagedCodebook& cb, const LatentChanges& ch,
                       int64_t pairs_per_step, Rng& rng, PerpForm form) {
  return perpendicular_loss(
      g, cb, ch,
      draw_perpendicular_pairs(cb.num_sections, cb.elements_per_section, pairs_per_step,
                               rng),
      form);
}

Var sparsity_loss(Graph& g, const StagedCodebook& cb, const LatentChanges& ch) {
  std::vector<Var> terms;
  const int64_t n = cb.num_sections * cb.elements_per_section;
  for (int64_t f = 0; f < n; ++f) {
    Var sq = square(ch.delta[static_cast<size_t>(f)]);
    Var total = sum(sq);
    Var biggest = max_lastdim(sq);
    terms.push_back(sub(square(total), square(biggest)));
  }
  return sum_or_zero(g, terms);
}

Var commutativity_loss(Graph& g, const StagedCodebook& cb) {
  std::vector<Var> terms;
  const int64_t n = cb.num_sections * cb.elements_per_section;
  for (int64_t p = 0; p < n; ++p) {
    for (int64_t q = p + 1; q < n; ++q) {
      Var ab = matmul(cb.algebra[static_cast<size_t>(p)], cb.algebra[static_cast<size_t>(q)]);
      Var ba = matmul(cb.algebra[static_cast<size_t>(q)], cb.algebra[static_cast<size_t>(p)]);
      // Both pair orders contribute; the commutator norm is symmetric.
      terms.push_back(mul_scalar(sum(square(sub(ab, ba))), 2.0));
    }
  }
  return sum_or_zero(g, terms);
}

namespace {

Tensor to_tensor(const Eigen::VectorXd& z) {
  Tensor t({z.size()});
  for (int64_t i = 0; i < z.size(); ++i) t[i] = z[i];
  return t;
}

}  // namespace

double parallel_loss(const SymmetryCodebook& cb, const Eigen::VectorXd& z,
                     int64_t pair_budget, Rng* rng) {
  Graph g;
  StagedCodebook st = stage_codebook(g, cb);
  LatentChanges ch = latent_changes(g, st, g.constant(to_tensor(z)));
  return parallel_loss(g, st, ch, pair_budget, rng).item();
}

double perpendicular_loss(const SymmetryCodebook& cb, const Eigen::VectorXd& z,
                          int64_t pairs_per_step, Rng& rng, PerpForm form) {
  Graph g;
  StagedCodebook st = stage_codebook(g, cb);
  LatentChanges ch = latent_changes(g, st, g.constant(to_tensor(z)));
  return perpendicular_loss(g, st, ch, pairs_per_step, rng, form).item();
}

double sparsity_loss(const SymmetryCodebook& cb, const Eigen::VectorXd& z) {
  Graph g;
  StagedCodebook st = stage_codebook(g, cb);
  LatentChanges ch = latent_changes(g, st, g.constant(to_tensor(z)));
  return sparsity_loss(g, st, ch).item();
}

double commutativity_loss(const SymmetryCodebook& cb) {
  Graph g;
  StagedCodebook st = stage_codebook(g, cb);
  return commutativity_loss(g, st).item();
}

}  // namespace cfasl
