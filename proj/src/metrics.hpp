#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>

#include "datasets.hpp"
#include "rng.hpp"

namespace cfasl {

/// Maps dataset rows to latent means, one row per index. Metrics are
/// agnostic to where the representation comes from (a trained encoder or a
/// synthetic construction).
using RepresentationFn =
    std::function<Eigen::MatrixXd(const std::vector<int64_t>& rows)>;

struct MetricReport {
  std::string name;  // "fvm" or "m_fvm"
  double score = 0;  // in [0,1]
  std::optional<int64_t> k;
  int64_t trials = 0;
  int64_t votes_per_trial = 0;  // samples used per vote
  double prune_threshold = 0;
  uint64_t seed = 0;
  std::string config_json;  // run-config snapshot, when evaluated from one

  std::string to_json() const;
};

/// Factor-VAE metric: global per-dimension variances are estimated from
/// trials * samples_per_vote random encodings, dimensions below
/// prune_threshold are dropped, and each trial fixes one factor and votes
/// for the argmin-variance dimension of the normalized latents. The score
/// is the majority-vote classifier accuracy over all votes. Raises a
/// numerical error when every dimension is pruned.
MetricReport fvm(const RepresentationFn& rep, const FactorDataset& ds, int64_t trials,
                 int64_t samples_per_vote, double prune_threshold, Rng& rng);

/// Multi-factor extension: each trial fixes a random k-subset of factors,
/// takes the k lowest-std dimensions (unordered) of the normalized latents,
/// and tallies (factor-subset -> dimension-subset) counts. The score sums
/// each observed factor-subset's modal count and divides by the trial
/// count. Requires 2 <= k <= |F| - 1.
MetricReport m_fvm(const RepresentationFn& rep, const FactorDataset& ds, int64_t k,
                   int64_t trials, int64_t samples_per_vote, double prune_threshold,
                   Rng& rng);

/// Divides each latent dimension by its global std. Raises a numerical
/// error if any entry of global_std is not strictly positive.
Eigen::MatrixXd normalize_latents(const Eigen::MatrixXd& latents,
                                  const Eigen::VectorXd& global_std);

/// Encoder-mean representation over a dataset.
RepresentationFn model_representation(const class Model& model, const FactorDataset& ds);

}  // namespace cfasl
