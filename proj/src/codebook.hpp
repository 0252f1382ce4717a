#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "expm.hpp"
#include "graph.hpp"
#include "rng.hpp"

namespace cfasl {

/// Trainable codebook of Lie-algebra generators: |S| sections of |SS|
/// elements, each a D x D matrix. Sections are meant to specialize to one
/// generative factor each.
struct SymmetryCodebook {
  int64_t num_sections = 0;        // |S|
  int64_t elements_per_section = 0;  // |SS|
  int64_t latent_dim = 0;          // D
  Tensor generators;               // [S, SS, D, D]

  int64_t flat_count() const { return num_sections * elements_per_section; }
  int64_t flat_index(int64_t i, int64_t j) const { return i * elements_per_section + j; }
  Eigen::MatrixXd generator(int64_t i, int64_t j) const;
  void set_generator(int64_t i, int64_t j, const Eigen::MatrixXd& g);
  GroupElement group_element(int64_t i, int64_t j) const;
};

/// Generators drawn i.i.d. from N(0, (scale/D)^2); deterministic in seed.
SymmetryCodebook init_codebook(int64_t num_sections, int64_t elements_per_section,
                               int64_t latent_dim, double scale, uint64_t seed);

/// How the cross-section orthogonality penalty maps cosines to a loss.
enum class PerpForm { cos_sq, abs_cos };

/// Codebook staged on an autodiff graph: a flat view per element of the
/// algebra plus its exponential. Exponentials are computed once and shared
/// by every loss and composition in the step.
struct StagedCodebook {
  int64_t num_sections = 0;
  int64_t elements_per_section = 0;
  int64_t latent_dim = 0;
  Var generators;            // [S,SS,D,D]
  std::vector<Var> algebra;  // flat S*SS entries, each [D,D]
  std::vector<Var> group;    // exp(algebra)
};

/// with_exponentials=false skips the per-element expm (enough for the
/// commutativity loss and attention, which read the algebras only).
StagedCodebook stage_codebook(Graph& g, Var generators, int64_t num_sections,
                              int64_t elements_per_section, int64_t latent_dim,
                              bool with_exponentials = true);
StagedCodebook stage_codebook(Graph& g, const SymmetryCodebook& cb);

/// Latent changes delta_j^i = z - g_j^i z for every codebook element, with
/// cached norms. Changes with norm < 1e-12 are flagged degenerate and
/// skipped by the cosine-based losses.
struct LatentChanges {
  std::vector<Var> delta;  // flat S*SS entries, each [D]
  std::vector<Var> norm;   // scalars
  std::vector<bool> degenerate;
};

LatentChanges latent_changes(Graph& g, const StagedCodebook& cb, Var z);

/// Same-section alignment loss: sum over sampled same-section pairs of
/// -log(clamp(cos(delta_j, delta_k), 1e-6, 1)). Enumeration is exhaustive
/// for |SS| <= 16, otherwise pair_budget pairs are sampled from rng.
Var parallel_loss(Graph& g, const StagedCodebook& cb, const LatentChanges& ch,
                  int64_t pair_budget, Rng* rng = nullptr);

/// One sampled element-index pair per unordered section pair (times
/// pairs_per_step); entries are {section_i, section_k, element_j, element_l}.
using PerpDraws = std::vector<std::array<int64_t, 4>>;
PerpDraws draw_perpendicular_pairs(int64_t num_sections, int64_t elements_per_section,
                                   int64_t pairs_per_step, Rng& rng);

/// Cross-section orthogonality loss over pre-drawn element pairs: cos^2 (or
/// |cos|) of the two latent changes, summed.
Var perpendicular_loss(Graph& g, const StagedCodebook& cb, const LatentChanges& ch,
                       const PerpDraws& draws, PerpForm form = PerpForm::cos_sq);

/// Convenience form drawing pairs_per_step element pairs per section pair.
Var perpendicular_loss(Graph& g, const StagedCodebook& cb, const LatentChanges& ch,
                       int64_t pairs_per_step, Rng& rng,
                       PerpForm form = PerpForm::cos_sq);

/// One-hot change loss: sum over elements of (sum_k delta_k^2)^2 - max_k(delta_k^2)^2.
Var sparsity_loss(Graph& g, const StagedCodebook& cb, const LatentChanges& ch);

/// Sum over ordered generator pairs of the squared Frobenius norm of the
/// commutator.
Var commutativity_loss(Graph& g, const StagedCodebook& cb);

// Value-level wrappers matching the per-operation contracts; each builds a
// throwaway graph.
double parallel_loss(const SymmetryCodebook& cb, const Eigen::VectorXd& z,
                     int64_t pair_budget, Rng* rng = nullptr);
double perpendicular_loss(const SymmetryCodebook& cb, const Eigen::VectorXd& z,
                          int64_t pairs_per_step, Rng& rng,
                          PerpForm form = PerpForm::cos_sq);
double sparsity_loss(const SymmetryCodebook& cb, const Eigen::VectorXd& z);
double commutativity_loss(const SymmetryCodebook& cb);

constexpr double kCosineClampEps = 1e-6;
constexpr double kDegenerateNorm = 1e-12;
constexpr int64_t kExhaustivePairLimit = 16;

}  // namespace cfasl
