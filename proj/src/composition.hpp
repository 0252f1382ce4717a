#pragma once

#include <Eigen/Dense>
#include <vector>

#include "codebook.hpp"
#include "graph.hpp"
#include "rng.hpp"

namespace cfasl {

/// Posterior statistics of a sample pair; concat order is [mu1;sigma1;mu2;sigma2].
struct PairStatistics {
  Eigen::VectorXd mu1, sigma1, mu2, sigma2;

  Eigen::VectorXd concat() const;
  void validate() const;  // positive sigmas, matching sizes
};

/// Trainable attention parameters: per-section element head (W_c, b_c) and
/// 2-class section head (W_s, b_s).
struct AttentionHeads {
  int64_t num_sections = 0;
  int64_t latent_dim = 0;
  int64_t elements_per_section = 0;
  Tensor w_c;  // [S, 4D, SS]
  Tensor b_c;  // [S, SS]
  Tensor w_s;  // [S, 4D, 2]
  Tensor b_s;  // [S, 2]
};

AttentionHeads init_attention_heads(int64_t num_sections, int64_t latent_dim,
                                    int64_t elements_per_section, uint64_t seed);

/// Heads staged on a graph (leaves or parameter-store views).
struct StagedHeads {
  int64_t num_sections = 0;
  int64_t latent_dim = 0;
  int64_t elements_per_section = 0;
  Var w_c, b_c, w_s, b_s;
};

StagedHeads stage_heads(Graph& g, const AttentionHeads& h);
StagedHeads heads_from_vars(Var w_c, Var b_c, Var w_s, Var b_s, int64_t num_sections,
                            int64_t latent_dim, int64_t elements_per_section);

/// Binary per-dimension change target; requires |S| = D.
struct ChangeTarget {
  std::vector<int> target;  // entries in {0,1}
};

/// T_i = 1 iff |mu1_i - mu2_i| > threshold.
ChangeTarget change_target(const PairStatistics& stats, double threshold);

/// First attention step: per-section softmax over codebook elements and the
/// attended algebra g_c^i = sum_j attn_j^i * g_j^i.
struct SectionAttention {
  Var attention;                     // [S, SS], rows on the simplex
  std::vector<Var> section_algebra;  // S entries of [D, D]
};

SectionAttention element_attention(Graph& g, const StagedHeads& heads,
                                   const StagedCodebook& cb, Var stats_row /*[1,4D]*/);

/// Section-head logits p_s^i = stats * W_s^i + b_s^i, one [1,2] row per section.
std::vector<Var> section_logits(Graph& g, const StagedHeads& heads, Var stats_row);

/// Cross-entropy of softmax(p_s^i) against class T_i, summed over sections.
Var prediction_loss(Graph& g, const std::vector<Var>& logits, const ChangeTarget& target);

/// Switch value from a 2-logit row: Gumbel-softmax sample G at the given
/// temperature, dispatched on the raw second logit as printed:
/// G_2 if p_{s,2} >= 0.5 else 1 - G_1. Output lies in [0,1].
Var gumbel_switch(Graph& g, Var logits2 /*[1,2] or [2]*/, double temperature, Rng& rng);

/// Deterministic switch used at inference: 1[p_{s,2} >= 0.5].
double hard_switch(const Eigen::Vector2d& logits);

enum class ComposeMode { train, inference };

/// Everything the training step needs for one pair: attention, targets,
/// section logits, switches, and the composite, whose group matrix is the
/// single exponential of the switch-weighted algebra sum.
struct PairComposition {
  SectionAttention attention;
  std::vector<Var> logits;      // S x [1,2]
  std::vector<Var> switches;    // S scalars in [0,1]
  ChangeTarget target;
  Var aggregate_algebra;        // [D,D]
  Var group_matrix;             // exp(aggregate)
};

PairComposition compose_pair(Graph& g, const StagedCodebook& cb, const StagedHeads& heads,
                             Var stats_row, const PairStatistics& stats, double threshold,
                             double temperature, ComposeMode mode, Rng* rng);

/// Value-level composite symmetry, as extracted at inference time.
struct CompositeSymmetry {
  Eigen::MatrixXd element_attention;               // [S, SS]
  Eigen::VectorXd switch_values;                   // [S], hard {0,1}
  std::vector<Eigen::MatrixXd> section_algebra;    // S entries, D x D
  Eigen::MatrixXd aggregate_algebra;               // D x D
  Eigen::MatrixXd group_matrix;                    // exp(aggregate)
};

CompositeSymmetry compose_inference(const SymmetryCodebook& cb, const AttentionHeads& heads,
                                    const PairStatistics& stats);

}  // namespace cfasl
