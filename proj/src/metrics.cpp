#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>

#include "model.hpp"

namespace cfasl {

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["score"] = score;
  if (k) j["k"] = *k;
  j["trials"] = trials;
  j["votes_per_trial"] = votes_per_trial;
  j["prune_threshold"] = prune_threshold;
  j["seed"] = seed;
  if (!config_json.empty()) j["config"] = nlohmann::json::parse(config_json);
  return j.dump(2);
}

Eigen::MatrixXd normalize_latents(const Eigen::MatrixXd& latents,
                                  const Eigen::VectorXd& global_std) {
  CFASL_CHECK_ARG(latents.cols() == global_std.size(),
                  "normalize_latents: dimension mismatch");
  if (!(global_std.array() > 0).all())
    throw_numerical("degenerate representation: zero-std latent dimension");
  return latents.array().rowwise() / global_std.transpose().array();
}

namespace {

struct PrunedGlobals {
  Eigen::VectorXd global_std;        // full length D
  std::vector<int64_t> active_dims;  // dims with variance >= threshold
};

// Population variance per column.
Eigen::VectorXd column_variance(const Eigen::MatrixXd& m) {
  Eigen::RowVectorXd mean = m.colwise().mean();
  Eigen::MatrixXd centered = m.rowwise() - mean;
  return centered.array().square().colwise().mean().transpose();
}

PrunedGlobals estimate_globals(const RepresentationFn& rep, const FactorDataset& ds,
                               int64_t sample_count, double prune_threshold, Rng& rng) {
  std::vector<int64_t> rows(static_cast<size_t>(sample_count));
  for (auto& r : rows) r = rng.below(ds.n);
  Eigen::MatrixXd latents = rep(rows);
  Eigen::VectorXd var = column_variance(latents);
  PrunedGlobals g;
  g.global_std = var.array().sqrt();
  for (int64_t d = 0; d < var.size(); ++d)
    if (var[d] >= prune_threshold) g.active_dims.push_back(d);
  if (g.active_dims.empty())
    throw_numerical(
        "degenerate representation: all latent dimensions pruned (variance < " +
        std::to_string(prune_threshold) + ")");
  return g;
}

// Per-active-dimension variance of the fixed-factor batch, normalized by the
// global variance.
Eigen::VectorXd normalized_local_variance(const Eigen::MatrixXd& latents,
                                          const PrunedGlobals& g) {
  Eigen::VectorXd var = column_variance(latents);
  Eigen::VectorXd out(static_cast<int64_t>(g.active_dims.size()));
  for (size_t i = 0; i < g.active_dims.size(); ++i) {
    int64_t d = g.active_dims[i];
    out[static_cast<int64_t>(i)] = var[d] / (g.global_std[d] * g.global_std[d]);
  }
  return out;
}

}  // namespace

MetricReport fvm(const RepresentationFn& rep, const FactorDataset& ds, int64_t trials,
                 int64_t samples_per_vote, double prune_threshold, Rng& rng) {
  CFASL_CHECK_ARG(ds.num_factors() >= 2, "fvm: dataset must have at least 2 factors");
  CFASL_CHECK_ARG(trials >= 1 && samples_per_vote >= 2,
                  "fvm: trials >= 1 and samples_per_vote >= 2 required");
  PrunedGlobals globals =
      estimate_globals(rep, ds, trials * samples_per_vote, prune_threshold, rng);

  const int64_t f_count = ds.num_factors();
  const int64_t a_count = static_cast<int64_t>(globals.active_dims.size());
  // votes[f][active_dim]
  std::vector<std::vector<int64_t>> votes(
      static_cast<size_t>(f_count), std::vector<int64_t>(static_cast<size_t>(a_count), 0));

  for (int64_t t = 0; t < trials; ++t) {
    int64_t f = rng.below(f_count);
    int64_t v = rng.below(ds.factor_sizes[static_cast<size_t>(f)]);
    FactorQuery q{{f}, {v}};
    std::vector<int64_t> rows = sample_with_fixed_factors(ds, q, samples_per_vote, rng);
    Eigen::VectorXd local = normalized_local_variance(rep(rows), globals);
    int64_t best = 0;
    for (int64_t d = 1; d < a_count; ++d)
      if (local[d] < local[best]) best = d;
    ++votes[static_cast<size_t>(f)][static_cast<size_t>(best)];
  }

  // Majority-vote classifier accuracy: each dimension predicts its modal factor.
  int64_t correct = 0;
  for (int64_t d = 0; d < a_count; ++d) {
    int64_t best = 0;
    for (int64_t f = 0; f < f_count; ++f)
      if (votes[static_cast<size_t>(f)][static_cast<size_t>(d)] >
          votes[static_cast<size_t>(best)][static_cast<size_t>(d)])
        best = f;
    correct += votes[static_cast<size_t>(best)][static_cast<size_t>(d)];
  }

  MetricReport r;
  r.name = "fvm";
  r.score = static_cast<double>(correct) / static_cast<double>(trials);
  r.trials = trials;
  r.votes_per_trial = samples_per_vote;
  r.prune_threshold = prune_threshold;
  return r;
}

MetricReport m_fvm(const RepresentationFn& rep, const FactorDataset& ds, int64_t k,
                   int64_t trials, int64_t samples_per_vote, double prune_threshold,
                   Rng& rng) {
  const int64_t f_count = ds.num_factors();
  CFASL_CHECK_ARG(k >= 2 && k <= f_count - 1,
                  "m_fvm: k must satisfy 2 <= k <= num_factors - 1 (got k=" +
                      std::to_string(k) + ", factors=" + std::to_string(f_count) + ")");
  CFASL_CHECK_ARG(trials >= 1 && samples_per_vote >= 2,
                  "m_fvm: trials >= 1 and samples_per_vote >= 2 required");
  PrunedGlobals globals =
      estimate_globals(rep, ds, trials * samples_per_vote, prune_threshold, rng);
  const int64_t a_count = static_cast<int64_t>(globals.active_dims.size());
  CFASL_CHECK_ARG(a_count >= k, "m_fvm: fewer active dimensions than k");

  // tally[factor subset][dimension subset] -> count. Subsets are sorted.
  std::map<std::vector<int64_t>, std::map<std::vector<int64_t>, int64_t>> tally;

  for (int64_t t = 0; t < trials; ++t) {
    std::vector<int64_t> fsub = rng.sample_without_replacement(f_count, k);
    std::sort(fsub.begin(), fsub.end());
    FactorQuery q;
    q.fixed_factors = fsub;
    for (int64_t f : fsub)
      q.fixed_values.push_back(rng.below(ds.factor_sizes[static_cast<size_t>(f)]));
    std::vector<int64_t> rows = sample_with_fixed_factors(ds, q, samples_per_vote, rng);
    Eigen::VectorXd local = normalized_local_variance(rep(rows), globals);

    // k lowest-std active dims; ties break toward the lower index.
    std::vector<int64_t> order(static_cast<size_t>(a_count));
    for (int64_t i = 0; i < a_count; ++i) order[static_cast<size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return local[a] < local[b]; });
    std::vector<int64_t> dsub(order.begin(), order.begin() + k);
    for (auto& d : dsub) d = globals.active_dims[static_cast<size_t>(d)];
    std::sort(dsub.begin(), dsub.end());
    ++tally[fsub][dsub];
  }

  int64_t modal_sum = 0;
  for (const auto& [fsub, counts] : tally) {
    int64_t best = 0;
    for (const auto& [dsub, c] : counts) best = std::max(best, c);
    modal_sum += best;
  }

  MetricReport r;
  r.name = "m_fvm";
  r.score = static_cast<double>(modal_sum) / static_cast<double>(trials);
  r.k = k;
  r.trials = trials;
  r.votes_per_trial = samples_per_vote;
  r.prune_threshold = prune_threshold;
  return r;
}

RepresentationFn model_representation(const Model& model, const FactorDataset& ds) {
  return [&model, &ds](const std::vector<int64_t>& rows) {
    return model.encode_mean(ds.image_batch(rows));
  };
}

}  // namespace cfasl
