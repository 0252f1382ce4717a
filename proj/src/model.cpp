#include "model.hpp"

namespace cfasl {

Model::Model(const Spec& spec, uint64_t seed) : spec_(spec) {
  CFASL_CHECK_ARG(spec.latent_dim >= 1 && spec.sections >= 1 &&
                      spec.elements_per_section >= 1,
                  "Model: sizes must be >= 1");
  CFASL_CHECK_ARG(spec.sections == spec.latent_dim,
                  "Model: |S| must equal the latent dimension (change-target mapping)");
  Rng net_rng(seed);
  encoder_ = ConvEncoder(store_, spec.image_size, spec.channels,
                         static_cast<int>(spec.latent_dim), net_rng);
  decoder_ = ConvDecoder(store_, spec.image_size, spec.channels,
                         static_cast<int>(spec.latent_dim), net_rng);

  SymmetryCodebook cb = init_codebook(spec.sections, spec.elements_per_section,
                                      spec.latent_dim, spec.codebook_scale, seed + 1);
  codebook_idx_ = store_.add("codebook.generators", cb.generators);

  AttentionHeads heads = init_attention_heads(spec.sections, spec.latent_dim,
                                              spec.elements_per_section, seed + 2);
  wc_idx_ = store_.add("heads.w_c", heads.w_c);
  bc_idx_ = store_.add("heads.b_c", heads.b_c);
  ws_idx_ = store_.add("heads.w_s", heads.w_s);
  bs_idx_ = store_.add("heads.b_s", heads.b_s);
}

SymmetryCodebook Model::codebook_snapshot() const {
  SymmetryCodebook cb;
  cb.num_sections = spec_.sections;
  cb.elements_per_section = spec_.elements_per_section;
  cb.latent_dim = spec_.latent_dim;
  cb.generators = store_.value(codebook_idx_);
  return cb;
}

AttentionHeads Model::heads_snapshot() const {
  AttentionHeads h;
  h.num_sections = spec_.sections;
  h.latent_dim = spec_.latent_dim;
  h.elements_per_section = spec_.elements_per_section;
  h.w_c = store_.value(wc_idx_);
  h.b_c = store_.value(bc_idx_);
  h.w_s = store_.value(ws_idx_);
  h.b_s = store_.value(bs_idx_);
  return h;
}

namespace {

constexpr int64_t kEncodeChunk = 256;

}  // namespace

void Model::encode_stats(const Tensor& images, Eigen::MatrixXd* mu,
                         Eigen::MatrixXd* log_var) const {
  CFASL_CHECK_ARG(images.rank() == 4, "encode_stats: [B,C,H,W] input required");
  const int64_t b = images.dim(0);
  const int64_t d = spec_.latent_dim;
  const int64_t px = images.numel() / b;
  if (mu) mu->resize(b, d);
  if (log_var) log_var->resize(b, d);
  for (int64_t start = 0; start < b; start += kEncodeChunk) {
    int64_t len = std::min(kEncodeChunk, b - start);
    std::vector<int64_t> shape = images.shape();
    shape[0] = len;
    Tensor chunk(shape);
    std::copy(images.data() + start * px, images.data() + (start + len) * px,
              chunk.data());
    Graph g;
    std::vector<Var> params;
    for (int64_t i = 0; i < store_.size(); ++i)
      params.push_back(g.constant(store_.value(i)));
    EncoderOutput out = encoder_.forward(params, g.constant(chunk));
    const Tensor& mv = g.value(out.mu);
    const Tensor& lv = g.value(out.log_var);
    for (int64_t r = 0; r < len; ++r)
      for (int64_t c = 0; c < d; ++c) {
        if (mu) (*mu)(start + r, c) = mv[r * d + c];
        if (log_var) (*log_var)(start + r, c) = lv[r * d + c];
      }
  }
}

Eigen::MatrixXd Model::encode_mean(const Tensor& images) const {
  Eigen::MatrixXd mu;
  encode_stats(images, &mu, nullptr);
  return mu;
}

Tensor Model::decode_images(const Eigen::MatrixXd& z) const {
  const int64_t b = z.rows();
  CFASL_CHECK_ARG(z.cols() == spec_.latent_dim, "decode_images: latent size mismatch");
  Tensor zt({b, spec_.latent_dim});
  for (int64_t r = 0; r < b; ++r)
    for (int64_t c = 0; c < spec_.latent_dim; ++c) zt[r * spec_.latent_dim + c] = z(r, c);
  Graph g;
  std::vector<Var> params;
  for (int64_t i = 0; i < store_.size(); ++i)
    params.push_back(g.constant(store_.value(i)));
  Var out = sigmoid(decoder_.forward_logits(params, g.constant(zt)));
  return g.value(out);
}

Tensor as_single_batch(const Tensor& image, int channels, int image_size) {
  if (image.rank() == 4) {
    CFASL_CHECK_ARG(image.dim(0) == 1, "expected a single image");
    return image;
  }
  CFASL_CHECK_ARG(image.rank() == 3 &&
                      image.numel() == static_cast<int64_t>(channels) * image_size * image_size,
                  "image shape mismatch");
  return image.reshaped({1, channels, image_size, image_size});
}

PairStatistics Model::pair_stats(const Tensor& x1, const Tensor& x2) const {
  Tensor b1 = as_single_batch(x1, spec_.channels, spec_.image_size);
  Tensor b2 = as_single_batch(x2, spec_.channels, spec_.image_size);
  Eigen::MatrixXd mu1, lv1, mu2, lv2;
  encode_stats(b1, &mu1, &lv1);
  encode_stats(b2, &mu2, &lv2);
  PairStatistics ps;
  ps.mu1 = mu1.row(0).transpose();
  ps.mu2 = mu2.row(0).transpose();
  ps.sigma1 = (lv1.row(0).transpose() * 0.5).array().exp();
  ps.sigma2 = (lv2.row(0).transpose() * 0.5).array().exp();
  return ps;
}

}  // namespace cfasl
