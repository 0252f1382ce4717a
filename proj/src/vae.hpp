#pragma once

#include <vector>

#include "graph.hpp"
#include "nn.hpp"
#include "rng.hpp"

namespace cfasl {

struct ObjectiveConfig {
  enum class Kind { beta_vae, beta_tcvae };
  enum class Likelihood { bernoulli, continuous_bernoulli };

  Kind kind = Kind::beta_vae;
  double beta = 1.0;
  double alpha = 1.0;   // beta-TCVAE only
  double gamma = 1.0;   // beta-TCVAE only
  int64_t dataset_size = 0;  // N, needed by the TC estimator
  Likelihood likelihood = Likelihood::bernoulli;
};

/// Graph-level encoder output for a batch.
struct EncoderOutput {
  Var mu;       // [B, D]
  Var log_var;  // [B, D]
};

/// Strided conv encoder: 3 layers for 16x16 inputs, 4 for 32/64, each
/// halving the spatial size, followed by linear heads for mu and log-var.
class ConvEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(ParamStore& store, int image_size, int channels, int latent_dim,
              Rng& rng);

  EncoderOutput forward(const std::vector<Var>& params, Var images) const;

  int image_size() const { return image_size_; }
  int channels() const { return channels_; }
  int latent_dim() const { return latent_dim_; }

 private:
  int image_size_ = 0, channels_ = 0, latent_dim_ = 0;
  int feat_hw_ = 0, feat_ch_ = 0;
  std::vector<Conv2dLayer> convs_;
  LinearLayer fc_mu_, fc_logvar_;
};

/// Mirrored transposed-conv decoder producing pixel logits.
class ConvDecoder {
 public:
  ConvDecoder() = default;
  ConvDecoder(ParamStore& store, int image_size, int channels, int latent_dim,
              Rng& rng);

  Var forward_logits(const std::vector<Var>& params, Var z) const;  // [B,C,H,W]

 private:
  int image_size_ = 0, channels_ = 0, latent_dim_ = 0;
  int feat_hw_ = 0, feat_ch_ = 0;
  LinearLayer fc_;
  std::vector<ConvTranspose2dLayer> deconvs_;
};

/// eta draw for the reparameterization trick, one standard normal per latent.
Tensor sample_eta(int64_t batch, int64_t latent_dim, Rng& rng);

/// z = mu + exp(log_var / 2) * eta.
Var reparameterize(Graph& g, const EncoderOutput& out, const Tensor& eta);

/// Random split of a mini-batch into two index-paired halves.
struct PairBatch {
  Tensor first_half;   // [B/2, C, H, W]
  Tensor second_half;  // [B/2, C, H, W]
  std::vector<int64_t> permutation;  // row order used for the split
};

PairBatch make_pair_batch(const Tensor& batch, Rng& rng);

/// Negative beta-VAE ELBO: Bernoulli reconstruction cross-entropy plus
/// beta times the closed-form Gaussian KL; both summed over dimensions and
/// averaged over the batch.
Var elbo_beta_vae(Graph& g, Var recon_logits, const Tensor& x, const EncoderOutput& out,
                  double beta,
                  ObjectiveConfig::Likelihood likelihood =
                      ObjectiveConfig::Likelihood::bernoulli);

/// Negative beta-TCVAE objective: reconstruction + alpha*MI + beta*TC +
/// gamma*dimension-wise KL, estimated with importance-weighted sampling over
/// the batch (weights 1/N on the generating sample, (N-1)/(N(M-1)) off it).
Var elbo_beta_tcvae(Graph& g, Var recon_logits, const Tensor& x, const EncoderOutput& out,
                    Var z, const ObjectiveConfig& cfg);

/// The three decomposition terms, for logging and tests.
struct TcvaeTerms {
  Var mutual_information;
  Var total_correlation;
  Var dimension_kl;
};
TcvaeTerms tcvae_terms(Graph& g, const EncoderOutput& out, Var z, int64_t dataset_size);

}  // namespace cfasl
