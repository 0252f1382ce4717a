#pragma once

#include <Eigen/Dense>

#include "codebook.hpp"
#include "composition.hpp"
#include "nn.hpp"
#include "vae.hpp"

namespace cfasl {

/// The full trainable state: encoder/decoder networks, the symmetry
/// codebook and the attention heads, all registered in one ParamStore.
class Model {
 public:
  struct Spec {
    int image_size = 16;
    int channels = 1;
    int64_t latent_dim = 10;
    int64_t sections = 10;              // |S|; must equal latent_dim
    int64_t elements_per_section = 10;  // |SS|
    double codebook_scale = 0.01;
  };

  Model(const Spec& spec, uint64_t seed);

  const Spec& spec() const { return spec_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const ConvEncoder& encoder() const { return encoder_; }
  const ConvDecoder& decoder() const { return decoder_; }

  int64_t codebook_param() const { return codebook_idx_; }
  int64_t wc_param() const { return wc_idx_; }
  int64_t bc_param() const { return bc_idx_; }
  int64_t ws_param() const { return ws_idx_; }
  int64_t bs_param() const { return bs_idx_; }

  /// Value copies for inference-time composition and analysis.
  SymmetryCodebook codebook_snapshot() const;
  AttentionHeads heads_snapshot() const;

  // Inference helpers (no gradients).
  Eigen::MatrixXd encode_mean(const Tensor& images) const;
  void encode_stats(const Tensor& images, Eigen::MatrixXd* mu,
                    Eigen::MatrixXd* log_var) const;
  /// Sigmoid decoder outputs, [B, C, H, W].
  Tensor decode_images(const Eigen::MatrixXd& z) const;
  /// Posterior statistics of a pair of single images ([C,H,W] or [1,C,H,W]).
  PairStatistics pair_stats(const Tensor& x1, const Tensor& x2) const;

 private:
  Spec spec_;
  ParamStore store_;
  ConvEncoder encoder_;
  ConvDecoder decoder_;
  int64_t codebook_idx_ = -1;
  int64_t wc_idx_ = -1, bc_idx_ = -1, ws_idx_ = -1, bs_idx_ = -1;
};

/// Normalizes a single image to a [1,C,H,W] batch.
Tensor as_single_batch(const Tensor& image, int channels, int image_size);

}  // namespace cfasl
