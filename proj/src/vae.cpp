#include "vae.hpp"

#include <cmath>

namespace cfasl {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct StageSpec {
  std::vector<int> channels;  // per conv layer output channels
};

StageSpec encoder_spec(int image_size) {
  switch (image_size) {
    case 16:
      return {{32, 32, 64}};
    case 32:
      return {{32, 32, 64, 64}};
    case 64:
      return {{32, 32, 64, 64}};
    default:
      throw_invalid("unsupported image size " + std::to_string(image_size) +
                    " (expected 16, 32 or 64)");
  }
}

}  // namespace

ConvEncoder::ConvEncoder(ParamStore& store, int image_size, int channels,
                         int latent_dim, Rng& rng)
    : image_size_(image_size), channels_(channels), latent_dim_(latent_dim) {
  StageSpec spec = encoder_spec(image_size);
  int cin = channels;
  int hw = image_size;
  for (size_t i = 0; i < spec.channels.size(); ++i) {
    int cout = spec.channels[i];
    convs_.push_back(Conv2dLayer::create(store, "enc.conv" + std::to_string(i), cin,
                                         cout, 4, 2, 1, rng));
    cin = cout;
    hw /= 2;
  }
  feat_ch_ = cin;
  feat_hw_ = hw;
  int feat = feat_ch_ * feat_hw_ * feat_hw_;
  fc_mu_ = LinearLayer::create(store, "enc.fc_mu", feat, latent_dim, rng);
  fc_logvar_ = LinearLayer::create(store, "enc.fc_logvar", feat, latent_dim, rng);
}

EncoderOutput ConvEncoder::forward(const std::vector<Var>& params, Var images) const {
  const Tensor& xv = images.value();
  CFASL_CHECK_ARG(xv.rank() == 4 && xv.dim(1) == channels_ &&
                      xv.dim(2) == image_size_ && xv.dim(3) == image_size_,
                  "encoder: input shape mismatch, got " + xv.shape_str());
  Var h = images;
  for (const auto& conv : convs_) h = relu(conv.forward(params, h));
  int64_t b = xv.dim(0);
  Var flat = reshape(h, {b, static_cast<int64_t>(feat_ch_) * feat_hw_ * feat_hw_});
  EncoderOutput out;
  out.mu = fc_mu_.forward(params, flat);
  out.log_var = fc_logvar_.forward(params, flat);
  return out;
}

ConvDecoder::ConvDecoder(ParamStore& store, int image_size, int channels,
                         int latent_dim, Rng& rng)
    : image_size_(image_size), channels_(channels), latent_dim_(latent_dim) {
  StageSpec spec = encoder_spec(image_size);
  feat_ch_ = spec.channels.back();
  feat_hw_ = image_size >> static_cast<int>(spec.channels.size());
  int feat = feat_ch_ * feat_hw_ * feat_hw_;
  fc_ = LinearLayer::create(store, "dec.fc", latent_dim, feat, rng);
  std::vector<int> outs(spec.channels.begin(), spec.channels.end() - 1);
  std::reverse(outs.begin(), outs.end());
  outs.push_back(channels);
  int cin = feat_ch_;
  for (size_t i = 0; i < outs.size(); ++i) {
    deconvs_.push_back(ConvTranspose2dLayer::create(
        store, "dec.deconv" + std::to_string(i), cin, outs[i], 4, 2, 1, rng));
    cin = outs[i];
  }
}

Var ConvDecoder::forward_logits(const std::vector<Var>& params, Var z) const {
  const Tensor& zv = z.value();
  CFASL_CHECK_ARG(zv.rank() == 2 && zv.dim(1) == latent_dim_,
                  "decoder: latent shape mismatch, got " + zv.shape_str());
  int64_t b = zv.dim(0);
  Var h = relu(fc_.forward(params, z));
  h = reshape(h, {b, feat_ch_, feat_hw_, feat_hw_});
  for (size_t i = 0; i < deconvs_.size(); ++i) {
    h = deconvs_[i].forward(params, h);
    if (i + 1 < deconvs_.size()) h = relu(h);
  }
  return h;  // logits
}

Tensor sample_eta(int64_t batch, int64_t latent_dim, Rng& rng) {
  Tensor eta({batch, latent_dim});
  for (int64_t i = 0; i < eta.numel(); ++i) eta[i] = rng.normal();
  return eta;
}

Var reparameterize(Graph& g, const EncoderOutput& out, const Tensor& eta) {
  CFASL_CHECK_ARG(g.value(out.mu).same_shape(eta), "reparameterize: eta shape mismatch");
  Var sigma = exp(mul_scalar(out.log_var, 0.5));
  return add(out.mu, mul(sigma, g.constant(eta)));
}

PairBatch make_pair_batch(const Tensor& batch, Rng& rng) {
  CFASL_CHECK_ARG(batch.rank() == 4, "make_pair_batch: input must be [B,C,H,W]");
  const int64_t b = batch.dim(0);
  CFASL_CHECK_ARG(b >= 2 && b % 2 == 0, "make_pair_batch: batch size must be even");
  const int64_t stride = batch.numel() / b;
  PairBatch pb;
  pb.permutation = rng.permutation(b);
  std::vector<int64_t> half_shape = batch.shape();
  half_shape[0] = b / 2;
  pb.first_half = Tensor(half_shape);
  pb.second_half = Tensor(half_shape);
  for (int64_t k = 0; k < b / 2; ++k) {
    const double* src1 = batch.data() + pb.permutation[static_cast<size_t>(k)] * stride;
    const double* src2 =
        batch.data() + pb.permutation[static_cast<size_t>(k + b / 2)] * stride;
    std::copy(src1, src1 + stride, pb.first_half.data() + k * stride);
    std::copy(src2, src2 + stride, pb.second_half.data() + k * stride);
  }
  return pb;
}

namespace {

Var reconstruction_loss(Graph& g, Var recon_logits, const Tensor& x,
                        ObjectiveConfig::Likelihood likelihood, int64_t batch) {
  (void)g;
  Var ce = bce_logits_sum(recon_logits, x);
  if (likelihood == ObjectiveConfig::Likelihood::continuous_bernoulli)
    ce = sub(ce, sum(cb_log_normalizer(recon_logits)));
  return mul_scalar(ce, 1.0 / static_cast<double>(batch));
}

Var gaussian_kl_mean(Graph& g, const EncoderOutput& out, int64_t batch) {
  (void)g;
  // 0.5 * sum(mu^2 + exp(lv) - lv - 1) / B
  Var per = sub(add(square(out.mu), exp(out.log_var)),
                add_scalar(out.log_var, 1.0));
  return mul_scalar(sum(per), 0.5 / static_cast<double>(batch));
}

}  // namespace

Var elbo_beta_vae(Graph& g, Var recon_logits, const Tensor& x, const EncoderOutput& out,
                  double beta, ObjectiveConfig::Likelihood likelihood) {
  CFASL_CHECK_ARG(g.value(recon_logits).same_shape(x),
                  "elbo_beta_vae: reconstruction/input shape mismatch");
  CFASL_CHECK_ARG(beta >= 0, "elbo_beta_vae: beta must be non-negative");
  const int64_t b = x.dim(0);
  Var recon = reconstruction_loss(g, recon_logits, x, likelihood, b);
  Var kl = gaussian_kl_mean(g, out, b);
  return add(recon, mul_scalar(kl, beta));
}

TcvaeTerms tcvae_terms(Graph& g, const EncoderOutput& out, Var z, int64_t dataset_size) {
  const Tensor& muv = g.value(out.mu);
  const int64_t b = muv.dim(0);
  CFASL_CHECK_ARG(b >= 2, "tcvae: batch size must be >= 2");
  CFASL_CHECK_ARG(dataset_size >= b,
                  "tcvae: dataset_size must be set and >= batch size");

  // log q(z_n | x_n), summed over dimensions.
  Var diff = sub(z, out.mu);
  Var quad = mul(square(diff), exp(neg(out.log_var)));
  Var logqzx_el = mul_scalar(add_scalar(add(out.log_var, quad), kLog2Pi), -0.5);
  Var logqzx = sum_lastdim(logqzx_el);  // [B]

  // Importance weights: the generating sample is seen with probability 1/N,
  // the remaining M-1 rows stand in for the other N-1 points.
  const double n = static_cast<double>(dataset_size);
  const double m = static_cast<double>(b);
  Tensor logiw({b, b});
  const double off = std::log((n - 1.0) / (n * (m - 1.0)));
  const double diag = std::log(1.0 / n);
  for (int64_t r = 0; r < b; ++r)
    for (int64_t c = 0; c < b; ++c) logiw[r * b + c] = (r == c) ? diag : off;

  Var pairs = gauss_logdens_pairs(z, out.mu, out.log_var);  // [B,B,D]
  Var logqz = logsumexp_axis1(sum_lastdim(pairs), &logiw);  // [B]
  Var logprod = sum_lastdim(logsumexp_axis1(pairs, &logiw));  // [B]

  // log p(z) under the standard normal prior.
  Var logpz = sum_lastdim(mul_scalar(add_scalar(square(z), kLog2Pi), -0.5));  // [B]

  TcvaeTerms t;
  t.mutual_information = mean(sub(logqzx, logqz));
  t.total_correlation = mean(sub(logqz, logprod));
  t.dimension_kl = mean(sub(logprod, logpz));
  return t;
}

Var elbo_beta_tcvae(Graph& g, Var recon_logits, const Tensor& x, const EncoderOutput& out,
                    Var z, const ObjectiveConfig& cfg) {
  CFASL_CHECK_ARG(g.value(recon_logits).same_shape(x),
                  "elbo_beta_tcvae: reconstruction/input shape mismatch");
  const int64_t b = x.dim(0);
  CFASL_CHECK_ARG(b >= 2, "elbo_beta_tcvae: batch of at least 2 required");
  Var recon = reconstruction_loss(g, recon_logits, x, cfg.likelihood, b);
  TcvaeTerms t = tcvae_terms(g, out, z, cfg.dataset_size);
  Var penalty = add(add(mul_scalar(t.mutual_information, cfg.alpha),
                        mul_scalar(t.total_correlation, cfg.beta)),
                    mul_scalar(t.dimension_kl, cfg.gamma));
  return add(recon, penalty);
}

}  // namespace cfasl
