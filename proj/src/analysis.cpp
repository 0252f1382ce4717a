#include "analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "png_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace cfasl {

Eigen::VectorXd kl_per_dimension(const Eigen::VectorXd& mu,
                                 const Eigen::VectorXd& log_var) {
  CFASL_CHECK_ARG(mu.size() == log_var.size(), "kl_per_dimension: size mismatch");
  Eigen::VectorXd out(mu.size());
  for (int64_t i = 0; i < mu.size(); ++i)
    out[i] = 0.5 * (mu[i] * mu[i] + std::exp(log_var[i]) - log_var[i] - 1.0);
  return out;
}

namespace {

std::vector<int64_t> matching_rows(const FactorDataset& ds, const FactorQuery& q) {
  std::vector<int64_t> fixed(static_cast<size_t>(ds.num_factors()), -1);
  for (size_t i = 0; i < q.fixed_factors.size(); ++i)
    fixed[static_cast<size_t>(q.fixed_factors[i])] = q.fixed_values[i];
  std::vector<int64_t> rows;
  for (int64_t r = 0; r < ds.n; ++r) {
    bool ok = true;
    for (int64_t f = 0; f < ds.num_factors() && ok; ++f)
      if (fixed[static_cast<size_t>(f)] >= 0 && ds.factor(r, f) != fixed[static_cast<size_t>(f)])
        ok = false;
    if (ok) rows.push_back(r);
  }
  return rows;
}

Eigen::VectorXd tensor_row(const Eigen::MatrixXd& m, int64_t r) {
  return m.row(r).transpose();
}

}  // namespace

ScatterExport latent_scatter_export(const Model& model, const FactorDataset& ds,
                                    std::vector<int64_t> dims, const FactorQuery& fixed,
                                    int64_t n, int64_t color_factor, Rng& rng) {
  CFASL_CHECK_ARG(n >= 1, "latent_scatter_export: n must be >= 1");
  CFASL_CHECK_ARG(color_factor >= 0 && color_factor < ds.num_factors(),
                  "latent_scatter_export: color factor out of range");
  fixed.validate(ds);
  const int64_t d = model.spec().latent_dim;
  CFASL_CHECK_ARG(d >= 3, "latent_scatter_export: needs latent_dim >= 3");

  ScatterExport out;
  std::vector<int64_t> rows = matching_rows(ds, fixed);
  CFASL_CHECK_ARG(!rows.empty(), "latent_scatter_export: no rows match the query");
  // Shuffle then truncate: distinct samples, order independent of ds layout.
  for (int64_t i = static_cast<int64_t>(rows.size()) - 1; i > 0; --i)
    std::swap(rows[static_cast<size_t>(i)], rows[static_cast<size_t>(rng.below(i + 1))]);
  if (static_cast<int64_t>(rows.size()) > n) {
    rows.resize(static_cast<size_t>(n));
  } else if (static_cast<int64_t>(rows.size()) < n) {
    out.truncated = true;
  }

  Eigen::MatrixXd mu, lv;
  model.encode_stats(ds.image_batch(rows), &mu, &lv);

  if (dims.empty()) {
    // Pick the three dimensions with the largest mean per-sample KL.
    Eigen::VectorXd mean_kl = Eigen::VectorXd::Zero(d);
    for (int64_t r = 0; r < mu.rows(); ++r)
      mean_kl += kl_per_dimension(tensor_row(mu, r), tensor_row(lv, r));
    std::vector<int64_t> order(static_cast<size_t>(d));
    for (int64_t i = 0; i < d; ++i) order[static_cast<size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return mean_kl[a] > mean_kl[b]; });
    dims.assign(order.begin(), order.begin() + 3);
  }
  CFASL_CHECK_ARG(dims.size() == 3, "latent_scatter_export: exactly 3 dims required");
  CFASL_CHECK_ARG(dims[0] != dims[1] && dims[0] != dims[2] && dims[1] != dims[2],
                  "latent_scatter_export: dims must be distinct");
  for (int64_t dim : dims)
    CFASL_CHECK_ARG(dim >= 0 && dim < d, "latent_scatter_export: dim out of range");

  out.dims = dims;
  out.color_factor = color_factor;
  for (size_t i = 0; i < rows.size(); ++i) {
    out.rows.push_back({mu(static_cast<int64_t>(i), dims[0]),
                        mu(static_cast<int64_t>(i), dims[1]),
                        mu(static_cast<int64_t>(i), dims[2]),
                        static_cast<double>(ds.factor(rows[i], color_factor))});
  }
  return out;
}

EigenHeatmap eigen_decomposition(const Eigen::MatrixXd& latents) {
  CFASL_CHECK_ARG(latents.rows() >= 2, "eigen_decomposition: need at least 2 samples");
  const int64_t d = latents.cols();
  Eigen::RowVectorXd mean = latents.colwise().mean();
  Eigen::MatrixXd centered = latents.rowwise() - mean;
  Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(latents.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  CFASL_CHECK_ARG(solver.info() == Eigen::Success, "eigen_decomposition failed");

  // SelfAdjointEigenSolver sorts ascending; flip to descending.
  Eigen::VectorXd vals = solver.eigenvalues().reverse();
  Eigen::MatrixXd vecs = solver.eigenvectors().rowwise().reverse();

  // Drop numerically rank-deficient tail components.
  const double eps = std::max(1e-12, vals.cwiseAbs().maxCoeff() * 1e-12);
  int64_t keep = 0;
  for (int64_t i = 0; i < d; ++i)
    if (vals[i] > eps) ++keep;

  EigenHeatmap h;
  h.reduced = keep < d;
  if (keep == 0) keep = 1;
  h.eigenvalues = vals.head(keep);
  h.eigenvectors = vecs.leftCols(keep);
  h.component_one_hotness.resize(keep);
  for (int64_t i = 0; i < keep; ++i) {
    const auto col = h.eigenvectors.col(i);
    h.component_one_hotness[i] = col.cwiseAbs().maxCoeff() / col.norm();
  }
  h.one_hotness = h.component_one_hotness.mean();
  return h;
}

EigenHeatmap eigenvector_heatmap(const Model& model, const FactorDataset& ds, int64_t n,
                                 Rng& rng) {
  CFASL_CHECK_ARG(n >= model.spec().latent_dim,
                  "eigenvector_heatmap: need at least D samples");
  std::vector<int64_t> rows(static_cast<size_t>(n));
  for (auto& r : rows) r = rng.below(ds.n);
  return eigen_decomposition(model.encode_mean(ds.image_batch(rows)));
}

TraversalRecord dimension_swap_traversal(const Model& model, const Tensor& x1,
                                         const Tensor& x2, int64_t num_dims) {
  const int64_t d = model.spec().latent_dim;
  CFASL_CHECK_ARG(num_dims >= 1 && num_dims <= d,
                  "dimension_swap_traversal: num_dims out of range");
  Tensor b1 = as_single_batch(x1, model.spec().channels, model.spec().image_size);
  Tensor b2 = as_single_batch(x2, model.spec().channels, model.spec().image_size);
  Eigen::MatrixXd mu1, lv1, mu2;
  model.encode_stats(b1, &mu1, &lv1);
  model.encode_stats(b2, &mu2, nullptr);

  Eigen::VectorXd z1 = mu1.row(0).transpose();
  Eigen::VectorXd z2 = mu2.row(0).transpose();
  Eigen::VectorXd kl = kl_per_dimension(z1, lv1.row(0).transpose());

  std::vector<int64_t> order(static_cast<size_t>(d));
  for (int64_t i = 0; i < d; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return kl[a] > kl[b]; });

  TraversalRecord rec;
  rec.source_latent = z1;
  rec.decoded_images.push_back(model.decode_images(z1.transpose()));
  Eigen::VectorXd z = z1;
  for (int64_t t = 0; t < num_dims; ++t) {
    int64_t dim = order[static_cast<size_t>(t)];
    z[dim] = z2[dim];
    rec.edited_dims.push_back(dim);
    rec.edited_latents.push_back(z);
    rec.decoded_images.push_back(model.decode_images(z.transpose()));
  }
  return rec;
}

DecompositionResult composite_decomposition(const Model& model, const Tensor& x1,
                                            const Tensor& x2) {
  PairStatistics stats = model.pair_stats(x1, x2);
  DecompositionResult out;
  out.composite =
      compose_inference(model.codebook_snapshot(), model.heads_snapshot(), stats);

  Eigen::VectorXd z = stats.mu1;
  out.images.push_back(model.decode_images(z.transpose()));
  for (int64_t i = 0; i < out.composite.switch_values.size(); ++i) {
    if (out.composite.switch_values[i] < 0.5) continue;
    out.active_sections.push_back(i);
    z = matrix_exponential(out.composite.section_algebra[static_cast<size_t>(i)]) * z;
    out.images.push_back(model.decode_images(z.transpose()));
  }
  Eigen::VectorXd single = out.composite.group_matrix * stats.mu1;
  out.single_shot = model.decode_images(single.transpose());
  out.final_stage_mse = image_mse(out.images.back(), out.single_shot);
  return out;
}

ReplayResult sequential_symmetry_replay(const Model& model,
                                        const std::vector<Tensor>& sequence) {
  CFASL_CHECK_ARG(sequence.size() >= 2,
                  "sequential_symmetry_replay: need at least 2 images");
  ReplayResult out;
  for (size_t k = 1; k < sequence.size(); ++k) {
    PairStatistics stats = model.pair_stats(sequence[k - 1], sequence[k]);
    CompositeSymmetry g =
        compose_inference(model.codebook_snapshot(), model.heads_snapshot(), stats);
    Eigen::VectorXd moved = g.group_matrix * stats.mu1;
    Tensor replay = model.decode_images(moved.transpose());
    Tensor target = as_single_batch(sequence[k], model.spec().channels,
                                    model.spec().image_size);
    out.images.push_back(replay);
    out.step_mse.push_back(image_mse(replay, target));
    Tensor recon = model.decode_images(stats.mu2.transpose());
    out.recon_mse.push_back(image_mse(recon, target));
  }
  return out;
}

double image_mse(const Tensor& a, const Tensor& b) {
  CFASL_CHECK_ARG(a.numel() == b.numel(), "image_mse: size mismatch");
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

namespace {

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw_io("cannot write " + path);
  f << content;
  if (!f) throw_io("write failed: " + path);
}

void write_image_png(const std::string& path, const Tensor& image) {
  // First channel of a [1,C,H,W] (or [C,H,W]) image.
  int64_t h, w;
  if (image.rank() == 4) {
    h = image.dim(2);
    w = image.dim(3);
  } else {
    h = image.dim(1);
    w = image.dim(2);
  }
  std::vector<double> px(static_cast<size_t>(h * w));
  std::copy(image.data(), image.data() + h * w, px.begin());
  write_png_gray(path, px, w, h);
}

std::string latent_json(const Eigen::VectorXd& z) {
  json a = json::array();
  for (int64_t i = 0; i < z.size(); ++i) a.push_back(z[i]);
  return a.dump();
}

}  // namespace

void export_scatter(const ScatterExport& s, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::string csv = "z" + std::to_string(s.dims[0]) + ",z" + std::to_string(s.dims[1]) +
                    ",z" + std::to_string(s.dims[2]) + ",color_factor\n";
  char buf[160];
  for (const auto& r : s.rows) {
    std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g,%d\n", r[0], r[1], r[2],
                  static_cast<int>(r[3]));
    csv += buf;
  }
  write_text((fs::path(out_dir) / "scatter.csv").string(), csv);
}

void export_heatmap(const EigenHeatmap& h, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::string csv;
  for (int64_t r = 0; r < h.eigenvectors.rows(); ++r) {
    for (int64_t c = 0; c < h.eigenvectors.cols(); ++c) {
      if (c) csv += ",";
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%.10g", h.eigenvectors(r, c));
      csv += buf;
    }
    csv += "\n";
  }
  write_text((fs::path(out_dir) / "eigenvectors.csv").string(), csv);
  json meta;
  meta["one_hotness"] = h.one_hotness;
  meta["reduced"] = h.reduced;
  meta["eigenvalues"] = std::vector<double>(h.eigenvalues.data(),
                                            h.eigenvalues.data() + h.eigenvalues.size());
  meta["component_one_hotness"] = std::vector<double>(
      h.component_one_hotness.data(),
      h.component_one_hotness.data() + h.component_one_hotness.size());
  write_text((fs::path(out_dir) / "eigen_meta.json").string(), meta.dump(2) + "\n");
}

void export_traversal(const TraversalRecord& t, const std::string& out_dir) {
  fs::create_directories(out_dir);
  for (size_t i = 0; i < t.decoded_images.size(); ++i)
    write_image_png((fs::path(out_dir) / ("swap_" + std::to_string(i) + ".png")).string(),
                    t.decoded_images[i]);
  json meta;
  meta["source_latent"] = json::parse(latent_json(t.source_latent));
  meta["edited_dims"] = t.edited_dims;
  json edits = json::array();
  for (const auto& z : t.edited_latents) edits.push_back(json::parse(latent_json(z)));
  meta["edited_latents"] = edits;
  write_text((fs::path(out_dir) / "swap_meta.json").string(), meta.dump(2) + "\n");
}

void export_decomposition(const DecompositionResult& d, const std::string& out_dir) {
  fs::create_directories(out_dir);
  for (size_t i = 0; i < d.images.size(); ++i)
    write_image_png(
        (fs::path(out_dir) / ("decompose_" + std::to_string(i) + ".png")).string(),
        d.images[i]);
  write_image_png((fs::path(out_dir) / "decompose_single_shot.png").string(),
                  d.single_shot);
  json meta;
  meta["active_sections"] = d.active_sections;
  meta["final_stage_mse"] = d.final_stage_mse;
  json sw = json::array();
  for (int64_t i = 0; i < d.composite.switch_values.size(); ++i)
    sw.push_back(d.composite.switch_values[i]);
  meta["switch_values"] = sw;
  write_text((fs::path(out_dir) / "decompose_meta.json").string(), meta.dump(2) + "\n");
}

void export_replay(const ReplayResult& r, const std::string& out_dir) {
  fs::create_directories(out_dir);
  for (size_t i = 0; i < r.images.size(); ++i)
    write_image_png(
        (fs::path(out_dir) / ("replay_" + std::to_string(i + 1) + ".png")).string(),
        r.images[i]);
  json meta;
  meta["step_mse"] = r.step_mse;
  meta["reconstruction_mse"] = r.recon_mse;
  write_text((fs::path(out_dir) / "replay_meta.json").string(), meta.dump(2) + "\n");
}

}  // namespace cfasl
