#pragma once

#include <string>

#include "codebook.hpp"
#include "equivariance.hpp"
#include "vae.hpp"

namespace cfasl {

/// Full run configuration. File format is flat TOML-style `key = value`
/// lines with optional [section] headers that prefix keys ("section.key");
/// CLI flags override file values.
struct RunConfig {
  std::string dataset;     // dataset directory or .npz archive
  std::string output_dir = "out";

  // objective
  std::string objective = "beta_vae";  // beta_vae | beta_tcvae
  double beta = 1.0;
  double alpha = 1.0;
  double gamma = 1.0;
  std::string likelihood = "bernoulli";  // bernoulli | continuous_bernoulli

  // model
  int64_t latent_dim = 10;
  int64_t sections = 0;              // 0 -> latent_dim (|S| = |D|)
  int64_t elements_per_section = 0;  // 0 -> latent_dim
  double codebook_scale = 1.0;

  // CFASL hyper-parameters
  double epsilon = 0.1;
  double threshold = 0.5;
  double gumbel_temperature = 1e-4;
  std::string perp_form = "cos_sq";          // cos_sq | abs_cos
  std::string parallel_form = "neg_log_cos"; // only implemented form
  int64_t pair_budget = 64;
  int64_t perp_pairs_per_step = 1;

  // training
  double learning_rate = 1e-4;
  int64_t batch_size = 64;
  int64_t steps = 0;
  uint64_t seed = 1;
  int64_t checkpoint_every = 1000;

  AblationMask ablation;
  LossWeights weights;

  int64_t effective_sections() const { return sections > 0 ? sections : latent_dim; }
  int64_t effective_elements() const {
    return elements_per_section > 0 ? elements_per_section : latent_dim;
  }
  ObjectiveConfig objective_config(int64_t dataset_size) const;
  PerpForm perp_form_enum() const;

  void validate() const;
  /// Assign one field from its string form; unknown keys raise
  /// invalid-argument. Keys use the flat names above plus "ablation.<loss>"
  /// and "weight.<loss>".
  void set_key(const std::string& key, const std::string& value);

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig from_toml_file(const std::string& path);
};

}  // namespace cfasl
