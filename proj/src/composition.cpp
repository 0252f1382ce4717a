#include "composition.hpp"

#include <cmath>

namespace cfasl {

Eigen::VectorXd PairStatistics::concat() const {
  const int64_t d = mu1.size();
  Eigen::VectorXd out(4 * d);
  out << mu1, sigma1, mu2, sigma2;
  return out;
}

void PairStatistics::validate() const {
  const int64_t d = mu1.size();
  CFASL_CHECK_ARG(sigma1.size() == d && mu2.size() == d && sigma2.size() == d,
                  "PairStatistics: component size mismatch");
  CFASL_CHECK_ARG((sigma1.array() > 0).all() && (sigma2.array() > 0).all(),
                  "PairStatistics: sigmas must be strictly positive");
}

AttentionHeads init_attention_heads(int64_t num_sections, int64_t latent_dim,
                                    int64_t elements_per_section, uint64_t seed) {
  CFASL_CHECK_ARG(num_sections >= 1 && latent_dim >= 1 && elements_per_section >= 1,
                  "init_attention_heads: sizes must be >= 1");
  AttentionHeads h;
  h.num_sections = num_sections;
  h.latent_dim = latent_dim;
  h.elements_per_section = elements_per_section;
  Rng rng(seed);
  const int64_t in = 4 * latent_dim;
  const double stddev = std::sqrt(1.0 / static_cast<double>(in));
  h.w_c = Tensor({num_sections, in, elements_per_section});
  h.w_s = Tensor({num_sections, in, 2});
  h.b_c = Tensor({num_sections, elements_per_section});
  h.b_s = Tensor({num_sections, 2});
  for (int64_t i = 0; i < h.w_c.numel(); ++i) h.w_c[i] = rng.normal(0.0, stddev);
  for (int64_t i = 0; i < h.w_s.numel(); ++i) h.w_s[i] = rng.normal(0.0, stddev);
  return h;
}

StagedHeads stage_heads(Graph& g, const AttentionHeads& h) {
  return heads_from_vars(g.leaf(h.w_c), g.leaf(h.b_c), g.leaf(h.w_s), g.leaf(h.b_s),
                         h.num_sections, h.latent_dim, h.elements_per_section);
}

StagedHeads heads_from_vars(Var w_c, Var b_c, Var w_s, Var b_s, int64_t num_sections,
                            int64_t latent_dim, int64_t elements_per_section) {
  StagedHeads s;
  s.num_sections = num_sections;
  s.latent_dim = latent_dim;
  s.elements_per_section = elements_per_section;
  s.w_c = w_c;
  s.b_c = b_c;
  s.w_s = w_s;
  s.b_s = b_s;
  return s;
}

ChangeTarget change_target(const PairStatistics& stats, double threshold) {
  CFASL_CHECK_ARG(threshold > 0, "change_target: threshold must be positive");
  ChangeTarget t;
  t.target.resize(static_cast<size_t>(stats.mu1.size()));
  for (int64_t i = 0; i < stats.mu1.size(); ++i)
    t.target[static_cast<size_t>(i)] =
        std::abs(stats.mu1[i] - stats.mu2[i]) > threshold ? 1 : 0;
  return t;
}

SectionAttention element_attention(Graph& g, const StagedHeads& heads,
                                   const StagedCodebook& cb, Var stats_row) {
  CFASL_CHECK_ARG(heads.num_sections == cb.num_sections &&
                      heads.elements_per_section == cb.elements_per_section &&
                      heads.latent_dim == cb.latent_dim,
                  "element_attention: head/codebook shape mismatch");
  const Tensor& sv = g.value(stats_row);
  const int64_t in = 4 * heads.latent_dim;
  CFASL_CHECK_ARG(sv.rank() == 2 && sv.dim(0) == 1 && sv.dim(1) == in,
                  "element_attention: stats must be [1, 4D]");
  const int64_t ss = heads.elements_per_section;
  SectionAttention out;
  std::vector<Var> attn_rows;
  for (int64_t i = 0; i < heads.num_sections; ++i) {
    Var wi = slice_block(heads.w_c, i * in * ss, {in, ss});
    Var bi = slice_block(heads.b_c, i * ss, {ss});
    Var attn = row_softmax(add_rowvec(matmul(stats_row, wi), bi));  // [1, SS]
    attn_rows.push_back(attn);
    std::vector<Var> weighted;
    weighted.reserve(static_cast<size_t>(ss));
    for (int64_t j = 0; j < ss; ++j) {
      Var aj = slice_block(attn, j, {});
      weighted.push_back(scale_by(cb.algebra[static_cast<size_t>(i * ss + j)], aj));
    }
    out.section_algebra.push_back(add_n(weighted));  // [D, D]
  }
  out.attention = concat_rows(attn_rows);  // [S, SS]
  return out;
}

std::vector<Var> section_logits(Graph& g, const StagedHeads& heads, Var stats_row) {
  (void)g;
  const int64_t in = 4 * heads.latent_dim;
  std::vector<Var> out;
  for (int64_t i = 0; i < heads.num_sections; ++i) {
    Var wi = slice_block(heads.w_s, i * in * 2, {in, 2});
    Var bi = slice_block(heads.b_s, i * 2, {2});
    out.push_back(add_rowvec(matmul(stats_row, wi), bi));  // [1, 2]
  }
  return out;
}

Var prediction_loss(Graph& g, const std::vector<Var>& logits, const ChangeTarget& target) {
  (void)g;
  CFASL_CHECK_ARG(logits.size() == target.target.size(),
                  "prediction_loss: section count mismatch");
  std::vector<Var> terms;
  for (size_t i = 0; i < logits.size(); ++i) {
    Var row = reshape(logits[i], {2});
    int t = target.target[i];
    Var ce = sub(logsumexp_vec(row), slice_block(row, t, {}));
    terms.push_back(ce);
  }
  return sum(concat_vec(terms));
}

Var gumbel_switch(Graph& g, Var logits2, double temperature, Rng& rng) {
  CFASL_CHECK_ARG(temperature > 0, "gumbel_switch: temperature must be positive");
  const Tensor& lv = g.value(logits2);
  CFASL_CHECK_ARG(lv.numel() == 2, "gumbel_switch: expected 2 logits");
  Tensor noise({1, 2});
  noise[0] = rng.gumbel();
  noise[1] = rng.gumbel();
  Var perturbed = add(reshape(logits2, {1, 2}), g.constant(noise));
  Var gs = row_softmax(mul_scalar(perturbed, 1.0 / temperature));
  // The two branches of the printed switch coincide for a 2-class softmax
  // (G_1 + G_2 = 1); we keep the dispatch on the raw second logit as stated.
  if (lv[1] >= 0.5) return slice_block(gs, 1, {});
  return sub(g.constant(Tensor::scalar(1.0)), slice_block(gs, 0, {}));
}

double hard_switch(const Eigen::Vector2d& logits) {
  return logits[1] >= 0.5 ? 1.0 : 0.0;
}

PairComposition compose_pair(Graph& g, const StagedCodebook& cb, const StagedHeads& heads,
                             Var stats_row, const PairStatistics& stats, double threshold,
                             double temperature, ComposeMode mode, Rng* rng) {
  CFASL_CHECK_ARG(heads.num_sections == heads.latent_dim,
                  "compose_pair: requires |S| = D for the change-target mapping");
  PairComposition out;
  out.attention = element_attention(g, heads, cb, stats_row);
  out.logits = section_logits(g, heads, stats_row);
  out.target = change_target(stats, threshold);

  std::vector<Var> weighted;
  for (int64_t i = 0; i < heads.num_sections; ++i) {
    Var sw;
    if (mode == ComposeMode::train) {
      CFASL_CHECK_ARG(rng != nullptr, "compose_pair: rng required in train mode");
      sw = gumbel_switch(g, out.logits[static_cast<size_t>(i)], temperature, *rng);
    } else {
      Eigen::Vector2d lv(g.value(out.logits[static_cast<size_t>(i)])[0],
                         g.value(out.logits[static_cast<size_t>(i)])[1]);
      sw = g.constant(Tensor::scalar(hard_switch(lv)));
    }
    out.switches.push_back(sw);
    weighted.push_back(
        scale_by(out.attention.section_algebra[static_cast<size_t>(i)], sw));
  }
  out.aggregate_algebra = add_n(weighted);
  out.group_matrix = graph_expm(out.aggregate_algebra);
  return out;
}

CompositeSymmetry compose_inference(const SymmetryCodebook& cb, const AttentionHeads& heads,
                                    const PairStatistics& stats) {
  stats.validate();
  Graph g;
  StagedCodebook st = stage_codebook(g, g.constant(cb.generators), cb.num_sections,
                                     cb.elements_per_section, cb.latent_dim);
  StagedHeads sh = heads_from_vars(g.constant(heads.w_c), g.constant(heads.b_c),
                                   g.constant(heads.w_s), g.constant(heads.b_s),
                                   heads.num_sections, heads.latent_dim,
                                   heads.elements_per_section);
  Eigen::VectorXd cat = stats.concat();
  Tensor row({1, cat.size()});
  for (int64_t i = 0; i < cat.size(); ++i) row[i] = cat[i];
  // Threshold is irrelevant here (targets are a training label); pass any
  // positive value.
  PairComposition pc = compose_pair(g, st, sh, g.constant(row), stats, 1.0, 1.0,
                                    ComposeMode::inference, nullptr);

  CompositeSymmetry cs;
  const int64_t s = cb.num_sections, ss = cb.elements_per_section, d = cb.latent_dim;
  cs.element_attention.resize(s, ss);
  const Tensor& attn = g.value(pc.attention.attention);
  for (int64_t i = 0; i < s; ++i)
    for (int64_t j = 0; j < ss; ++j) cs.element_attention(i, j) = attn[i * ss + j];
  cs.switch_values.resize(s);
  for (int64_t i = 0; i < s; ++i)
    cs.switch_values[i] = g.value(pc.switches[static_cast<size_t>(i)])[0];
  for (int64_t i = 0; i < s; ++i) {
    const Tensor& alg = g.value(pc.attention.section_algebra[static_cast<size_t>(i)]);
    Eigen::MatrixXd m(d, d);
    for (int64_t r = 0; r < d; ++r)
      for (int64_t c = 0; c < d; ++c) m(r, c) = alg[r * d + c];
    cs.section_algebra.push_back(std::move(m));
  }
  const Tensor& agg = g.value(pc.aggregate_algebra);
  cs.aggregate_algebra.resize(d, d);
  for (int64_t r = 0; r < d; ++r)
    for (int64_t c = 0; c < d; ++c) cs.aggregate_algebra(r, c) = agg[r * d + c];
  cs.group_matrix = matrix_exponential(cs.aggregate_algebra);
  return cs;
}

}  // namespace cfasl
