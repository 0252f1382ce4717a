#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "composition.hpp"
#include "datasets.hpp"
#include "model.hpp"

namespace cfasl {

/// Per-dimension KL(q || N(0,1)) of one posterior: 0.5(mu^2 + s^2 - log s^2 - 1).
Eigen::VectorXd kl_per_dimension(const Eigen::VectorXd& mu,
                                 const Eigen::VectorXd& log_var);

struct ScatterExport {
  std::vector<int64_t> dims;  // the 3 latent coordinates exported
  int64_t color_factor = 0;
  std::vector<std::array<double, 4>> rows;  // z[d0], z[d1], z[d2], factor value
  bool truncated = false;  // fewer matching samples than requested
};

/// Latent scatter data: n distinct rows matching the fixed-factor query,
/// projected onto three dimensions. When dims is empty the three largest
/// mean-KL dimensions are chosen.
ScatterExport latent_scatter_export(const Model& model, const FactorDataset& ds,
                                    std::vector<int64_t> dims, const FactorQuery& fixed,
                                    int64_t n, int64_t color_factor, Rng& rng);

struct EigenHeatmap {
  Eigen::MatrixXd eigenvectors;  // columns, descending eigenvalue order
  Eigen::VectorXd eigenvalues;
  Eigen::VectorXd component_one_hotness;  // max|v_i| / ||v|| per column
  double one_hotness = 0;                 // mean over components
  bool reduced = false;  // rank-deficient covariance dropped components
};

/// PCA of a latent sample; exposed separately so constructed latents can be
/// analyzed in tests.
EigenHeatmap eigen_decomposition(const Eigen::MatrixXd& latents);
EigenHeatmap eigenvector_heatmap(const Model& model, const FactorDataset& ds, int64_t n,
                                 Rng& rng);

struct TraversalRecord {
  Eigen::VectorXd source_latent;
  std::vector<Eigen::VectorXd> edited_latents;
  std::vector<int64_t> edited_dims;   // KL-descending order
  std::vector<Tensor> decoded_images;  // [1,C,H,W]; entry 0 decodes the source
};

/// Replaces z1's dimensions with z2's one at a time, most-divergent (by the
/// closed-form per-dimension KL of x1's posterior) first.
TraversalRecord dimension_swap_traversal(const Model& model, const Tensor& x1,
                                         const Tensor& x2, int64_t num_dims);

struct DecompositionResult {
  CompositeSymmetry composite;
  std::vector<int64_t> active_sections;
  std::vector<Tensor> images;  // cumulative stage decodes; entry 0 decodes z1
  Tensor single_shot;          // decode(g_c z1)
  double final_stage_mse = 0;  // MSE(images.back(), single_shot)
};

/// Applies the active sections' exponentials to z1 one at a time,
/// decoding each stage; under a commuting codebook the final stage matches
/// the single-shot composite.
DecompositionResult composite_decomposition(const Model& model, const Tensor& x1,
                                            const Tensor& x2);

struct ReplayResult {
  std::vector<Tensor> images;     // decode(g_(k-1,k) z_{k-1}), k = 1..K-1
  std::vector<double> step_mse;   // against x_k
  std::vector<double> recon_mse;  // decode(z_k) against x_k, for reference
};

/// Extracts the inference-mode symmetry between consecutive images and
/// replays each step from the previous latent.
ReplayResult sequential_symmetry_replay(const Model& model,
                                        const std::vector<Tensor>& sequence);

double image_mse(const Tensor& a, const Tensor& b);

// File exports. CSV for tables, PNG + JSON sidecar for image sequences.
void export_scatter(const ScatterExport& s, const std::string& out_dir);
void export_heatmap(const EigenHeatmap& h, const std::string& out_dir);
void export_traversal(const TraversalRecord& t, const std::string& out_dir);
void export_decomposition(const DecompositionResult& d, const std::string& out_dir);
void export_replay(const ReplayResult& r, const std::string& out_dir);

}  // namespace cfasl
