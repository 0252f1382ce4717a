#include "train.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "analysis.hpp"
#include "composition.hpp"
#include "equivariance.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace cfasl {

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'F', 'A', 'S', 'L', 'C', 'K', '1'};

void put_u64(std::ostream& os, uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw_io("checkpoint truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  uint64_t n = get_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw_io("checkpoint truncated");
  return s;
}

void put_tensor(std::ostream& os, const Tensor& t) {
  put_u64(os, static_cast<uint64_t>(t.rank()));
  for (int64_t i = 0; i < t.rank(); ++i) put_u64(os, static_cast<uint64_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor get_tensor(std::istream& is) {
  uint64_t rank = get_u64(is);
  std::vector<int64_t> shape;
  for (uint64_t i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(get_u64(is)));
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!is) throw_io("checkpoint truncated");
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& cfg, const Model& model,
                     const Adam& opt, const Rng& rng, int64_t step) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw_io("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  put_string(f, cfg.to_json());
  put_u64(f, static_cast<uint64_t>(step));
  put_u64(f, static_cast<uint64_t>(opt.steps_taken()));
  put_string(f, rng.state());
  const ParamStore& store = model.params();
  put_u64(f, static_cast<uint64_t>(store.size()));
  for (int64_t i = 0; i < store.size(); ++i) {
    const auto& e = store.entry(i);
    put_string(f, e.name);
    put_tensor(f, e.value);
    put_tensor(f, e.m);
    put_tensor(f, e.v);
  }
  if (!f) throw_io("checkpoint write failed: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw_io("not a checkpoint file: " + path);
  CheckpointData ck;
  ck.config = RunConfig::from_json(get_string(f));
  ck.step = static_cast<int64_t>(get_u64(f));
  ck.adam_steps = static_cast<int64_t>(get_u64(f));
  ck.rng_state = get_string(f);
  uint64_t count = get_u64(f);
  for (uint64_t i = 0; i < count; ++i) {
    CheckpointData::ParamSnapshot p;
    p.name = get_string(f);
    p.value = get_tensor(f);
    p.m = get_tensor(f);
    p.v = get_tensor(f);
    ck.params.push_back(std::move(p));
  }
  return ck;
}

Model::Spec spec_from_config(const RunConfig& cfg, const FactorDataset& ds) {
  CFASL_CHECK_ARG(ds.height == ds.width, "dataset images must be square");
  Model::Spec spec;
  spec.image_size = static_cast<int>(ds.height);
  spec.channels = static_cast<int>(ds.channels);
  spec.latent_dim = cfg.latent_dim;
  spec.sections = cfg.effective_sections();
  spec.elements_per_section = cfg.effective_elements();
  spec.codebook_scale = cfg.codebook_scale;
  return spec;
}

std::unique_ptr<Model> model_from_checkpoint(const CheckpointData& ck,
                                             const FactorDataset& ds) {
  auto model = std::make_unique<Model>(spec_from_config(ck.config, ds), ck.config.seed);
  ParamStore& store = model->params();
  CFASL_CHECK_ARG(static_cast<int64_t>(ck.params.size()) == store.size(),
                  "checkpoint parameter count mismatch (wrong dataset geometry?)");
  for (int64_t i = 0; i < store.size(); ++i) {
    auto& e = store.entry(i);
    const auto& p = ck.params[static_cast<size_t>(i)];
    CFASL_CHECK_ARG(p.name == e.name && p.value.same_shape(e.value),
                    "checkpoint parameter mismatch at '" + e.name + "'");
    e.value = p.value;
    e.m = p.m;
    e.v = p.v;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(const RunConfig& cfg, const FactorDataset& ds)
    : cfg_(cfg), ds_(&ds), opt_(cfg.learning_rate), rng_(cfg.seed) {
  cfg_.validate();
  CFASL_CHECK_ARG(cfg_.batch_size <= ds.n,
                  "batch_size exceeds dataset size " + std::to_string(ds.n));
  model_ = std::make_unique<Model>(spec_from_config(cfg_, ds), cfg_.seed);
}

Trainer::Trainer(const CheckpointData& ck, const FactorDataset& ds)
    : cfg_(ck.config), ds_(&ds), opt_(ck.config.learning_rate), rng_(0) {
  cfg_.validate();
  CFASL_CHECK_ARG(cfg_.batch_size <= ds.n,
                  "batch_size exceeds dataset size " + std::to_string(ds.n));
  model_ = model_from_checkpoint(ck, ds);
  opt_.set_steps_taken(ck.adam_steps);
  rng_.set_state(ck.rng_state);
  step_ = ck.step;
}

void Trainer::save(const std::string& path) const {
  save_checkpoint(path, cfg_, *model_, opt_, rng_, step_);
}

namespace {

Var mean_over(Graph& g, std::vector<Var>& terms, int64_t count) {
  if (terms.empty()) return g.constant(Tensor::scalar(0.0));
  return mul_scalar(sum(concat_vec(terms)), 1.0 / static_cast<double>(count));
}

Tensor stack_halves(const PairBatch& pair) {
  const Tensor& a = pair.first_half;
  const Tensor& b = pair.second_half;
  std::vector<int64_t> shape = a.shape();
  shape[0] *= 2;
  Tensor out(shape);
  std::copy(a.data(), a.data() + a.numel(), out.data());
  std::copy(b.data(), b.data() + b.numel(), out.data() + a.numel());
  return out;
}

}  // namespace

LossBreakdown Trainer::step() {
  const FactorDataset& ds = *ds_;
  const int64_t batch = cfg_.batch_size;
  const int64_t pairs = batch / 2;
  const int64_t d = cfg_.latent_dim;
  const int64_t s = cfg_.effective_sections();
  const int64_t ss = cfg_.effective_elements();
  const AblationMask& mask = cfg_.ablation;

  const bool need_geometry = mask.parallel || mask.perpendicular || mask.sparsity;
  const bool need_compose = mask.equivariance;
  const bool need_logits = mask.prediction || need_compose;
  const bool need_codebook = need_geometry || need_compose || mask.commutative;
  const bool need_decoder_equiv = mask.equivariance && cfg_.weights.epsilon > 0;

  // Fixed draw order: batch rows, pair permutation, reparameterization
  // noise, shared perpendicular element pairs, then per-pair gumbel noise.
  last_indices_ = rng_.sample_without_replacement(ds.n, batch);
  Tensor raw_batch = ds.image_batch(last_indices_);
  PairBatch pair = make_pair_batch(raw_batch, rng_);
  Tensor eta = sample_eta(batch, d, rng_);
  PerpDraws perp_draws;
  if (mask.perpendicular && s >= 2)
    perp_draws = draw_perpendicular_pairs(s, ss, cfg_.perp_pairs_per_step, rng_);

  Tensor combined = stack_halves(pair);

  Graph g;
  g.reserve(4096);
  std::vector<Var> params = stage_params(g, model_->params());

  EncoderOutput enc = model_->encoder().forward(params, g.constant(combined));
  Var z = reparameterize(g, enc, eta);
  Var recon_logits = model_->decoder().forward_logits(params, z);

  ObjectiveConfig oc = cfg_.objective_config(ds.n);
  Var vae = oc.kind == ObjectiveConfig::Kind::beta_vae
                ? elbo_beta_vae(g, recon_logits, combined, enc, oc.beta, oc.likelihood)
                : elbo_beta_tcvae(g, recon_logits, combined, enc, z, oc);

  Var sigma = exp(mul_scalar(enc.log_var, 0.5));

  StagedCodebook scb;
  if (need_codebook)
    scb = stage_codebook(g, params[static_cast<size_t>(model_->codebook_param())], s, ss,
                         d, need_geometry);
  StagedHeads sheads = heads_from_vars(params[static_cast<size_t>(model_->wc_param())],
                                       params[static_cast<size_t>(model_->bc_param())],
                                       params[static_cast<size_t>(model_->ws_param())],
                                       params[static_cast<size_t>(model_->bs_param())],
                                       s, d, ss);

  std::vector<Var> pl_terms, pd_terms, sp_terms, pred_terms, ee_terms;
  std::vector<Var> gz1_rows;

  const Tensor& mu_val = g.value(enc.mu);
  const Tensor& sigma_val = g.value(sigma);

  for (int64_t k = 0; k < pairs; ++k) {
    Var mu1 = slice_block(enc.mu, k * d, {d});
    Var mu2 = slice_block(enc.mu, (pairs + k) * d, {d});

    PairStatistics ps;
    ps.mu1.resize(d);
    ps.mu2.resize(d);
    ps.sigma1.resize(d);
    ps.sigma2.resize(d);
    for (int64_t c = 0; c < d; ++c) {
      ps.mu1[c] = mu_val[k * d + c];
      ps.mu2[c] = mu_val[(pairs + k) * d + c];
      ps.sigma1[c] = sigma_val[k * d + c];
      ps.sigma2[c] = sigma_val[(pairs + k) * d + c];
    }

    std::vector<Var> logits_s;
    Var stats_row;
    if (need_logits) {
      Var sig1 = slice_block(sigma, k * d, {d});
      Var sig2 = slice_block(sigma, (pairs + k) * d, {d});
      stats_row = reshape(concat_vec({mu1, sig1, mu2, sig2}), {1, 4 * d});
      logits_s = section_logits(g, sheads, stats_row);
    }

    if (mask.prediction) {
      ChangeTarget target = change_target(ps, cfg_.threshold);
      pred_terms.push_back(prediction_loss(g, logits_s, target));
    }

    if (need_compose) {
      SectionAttention att = element_attention(g, sheads, scb, stats_row);
      std::vector<Var> weighted;
      for (int64_t i = 0; i < s; ++i) {
        Var sw = gumbel_switch(g, logits_s[static_cast<size_t>(i)],
                               cfg_.gumbel_temperature, rng_);
        weighted.push_back(scale_by(att.section_algebra[static_cast<size_t>(i)], sw));
      }
      Var aggregate = add_n(weighted);
      ee_terms.push_back(encoder_equiv_loss(g, mu1, mu2, aggregate));
      if (need_decoder_equiv) {
        Var gc = graph_expm(aggregate);
        gz1_rows.push_back(transpose(matmul(gc, reshape(mu1, {d, 1}))));
      }
    }

    if (need_geometry) {
      // The geometry losses regularize the codebook; z enters as a constant
      // so their (initially large) values cannot distort the encoder.
      Tensor mu1_val({d});
      for (int64_t c = 0; c < d; ++c) mu1_val[c] = ps.mu1[c];
      LatentChanges changes = latent_changes(g, scb, g.constant(mu1_val));
      if (mask.parallel)
        pl_terms.push_back(parallel_loss(g, scb, changes, cfg_.pair_budget, &rng_));
      if (mask.perpendicular && s >= 2)
        pd_terms.push_back(
            perpendicular_loss(g, scb, changes, perp_draws, cfg_.perp_form_enum()));
      if (mask.sparsity) sp_terms.push_back(sparsity_loss(g, scb, changes));
    }
  }

  ObjectiveTerms terms;
  terms.vae = vae;
  terms.parallel = mean_over(g, pl_terms, pairs);
  terms.perpendicular = mean_over(g, pd_terms, pairs);
  terms.sparsity = mean_over(g, sp_terms, pairs);
  terms.prediction = mean_over(g, pred_terms, pairs);
  terms.encoder_equiv = mean_over(g, ee_terms, pairs);
  terms.commutative = mask.commutative ? commutativity_loss(g, scb)
                                       : g.constant(Tensor::scalar(0.0));
  if (!gz1_rows.empty()) {
    Var decoded =
        sigmoid(model_->decoder().forward_logits(params, concat_rows(gz1_rows)));
    terms.decoder_equiv = decoder_equiv_loss(g, decoded, pair.second_half);
  } else {
    terms.decoder_equiv = g.constant(Tensor::scalar(0.0));
  }

  TotalObjective objective = total_objective(g, terms, cfg_.weights, mask);

  // NaN watch before touching parameters.
  const std::pair<const char*, double> named[] = {
      {"vae", objective.breakdown.vae},
      {"parallel", objective.breakdown.parallel},
      {"perpendicular", objective.breakdown.perpendicular},
      {"sparsity", objective.breakdown.sparsity},
      {"commutative", objective.breakdown.commutative},
      {"prediction", objective.breakdown.prediction},
      {"encoder_equiv", objective.breakdown.encoder_equiv},
      {"decoder_equiv", objective.breakdown.decoder_equiv},
      {"total", objective.breakdown.total}};
  for (const auto& [name, value] : named)
    if (!std::isfinite(value))
      throw_numerical("non-finite loss '" + std::string(name) + "' at step " +
                      std::to_string(step_ + 1));

  g.backward(objective.total);
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    grads.push_back(g.grad(params[i]));
    if (!grads.back().all_finite())
      throw_numerical("non-finite gradient for parameter '" +
                      model_->params().entry(static_cast<int64_t>(i)).name +
                      "' at step " + std::to_string(step_ + 1));
  }
  opt_.step(model_->params(), grads);
  ++step_;
  return objective.breakdown;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

std::string checkpoint_name(const std::string& dir, int64_t step) {
  return (fs::path(dir) / ("checkpoint-" + std::to_string(step))).string();
}

void write_csv_header(std::ostream& os) {
  os << "step,total,vae,parallel,perpendicular,sparsity,commutative,prediction,"
        "encoder_equiv,decoder_equiv\n";
}

void write_csv_row(std::ostream& os, int64_t step, const LossBreakdown& b) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%" PRId64
                ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                step, b.total, b.vae, b.parallel, b.perpendicular, b.sparsity,
                b.commutative, b.prediction, b.encoder_equiv, b.decoder_equiv);
  os << buf;
}

}  // namespace

TrainOutputs cmd_train(const RunConfig& cfg, const FactorDataset& ds,
                       const std::string& resume_checkpoint) {
  std::unique_ptr<Trainer> trainer;
  RunConfig effective = cfg;
  if (resume_checkpoint.empty()) {
    trainer = std::make_unique<Trainer>(cfg, ds);
  } else {
    CheckpointData ck = load_checkpoint(resume_checkpoint);
    // The stored config governs the run; the caller may extend the step
    // budget and must choose where outputs go.
    ck.config.steps = cfg.steps > 0 ? cfg.steps : ck.config.steps;
    ck.config.output_dir = cfg.output_dir;
    effective = ck.config;
    trainer = std::make_unique<Trainer>(ck, ds);
  }
  fs::create_directories(effective.output_dir);

  TrainOutputs out;
  out.losses_csv = (fs::path(effective.output_dir) / "losses.csv").string();
  std::ofstream csv(out.losses_csv);
  if (!csv) throw_io("cannot write " + out.losses_csv);
  write_csv_header(csv);

  if (trainer->current_step() >= effective.steps) {
    out.final_checkpoint = checkpoint_name(effective.output_dir, trainer->current_step());
    trainer->save(out.final_checkpoint);
    return out;
  }

  while (trainer->current_step() < effective.steps) {
    LossBreakdown b;
    try {
      b = trainer->step();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::numerical) {
        json dump;
        dump["step"] = trainer->current_step() + 1;
        dump["error"] = e.what();
        dump["batch_indices"] = trainer->last_batch_indices();
        std::ofstream df(fs::path(effective.output_dir) / "nan_dump.json");
        df << dump.dump(2) << "\n";
      }
      throw;
    }
    int64_t step = trainer->current_step();
    write_csv_row(csv, step, b);
    ++out.steps_run;
    if (step % effective.checkpoint_every == 0 || step == effective.steps)
      trainer->save(checkpoint_name(effective.output_dir, step));
  }
  csv.flush();
  out.final_checkpoint = checkpoint_name(effective.output_dir, effective.steps);
  return out;
}

MetricReport cmd_eval(const Model& model, const FactorDataset& ds,
                      const std::string& metric, int64_t k, int64_t trials,
                      int64_t samples_per_vote, double prune_threshold, uint64_t seed,
                      const std::string& report_path, const std::string& config_json) {
  Rng rng(seed);
  RepresentationFn rep = model_representation(model, ds);
  MetricReport report;
  if (metric == "fvm") {
    CFASL_CHECK_ARG(k == 0, "fvm takes no k (use m_fvm for k-factor evaluation)");
    report = fvm(rep, ds, trials, samples_per_vote, prune_threshold, rng);
  } else if (metric == "m_fvm") {
    report = m_fvm(rep, ds, k, trials, samples_per_vote, prune_threshold, rng);
  } else {
    throw_invalid("unknown metric '" + metric + "' (valid: fvm, m_fvm)");
  }
  report.seed = seed;
  report.config_json = config_json;
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    if (!f) throw_io("cannot write report: " + report_path);
    f << report.to_json() << "\n";
  }
  return report;
}

void cmd_analyze(const Model& model, const FactorDataset& ds, const std::string& analysis,
                 const std::string& args_json, const std::string& out_dir) {
  json args;
  try {
    args = args_json.empty() ? json::object() : json::parse(args_json);
  } catch (const json::exception& e) {
    throw_invalid(std::string("bad analysis arguments: ") + e.what());
  }
  uint64_t seed = args.value("seed", 0ULL);
  Rng rng(seed);

  if (analysis == "scatter") {
    std::vector<int64_t> dims = args.value("dims", std::vector<int64_t>{});
    int64_t n = args.value("n", 640);
    int64_t color_factor = args.value("color_factor", 0);
    FactorQuery fixed;
    if (args.contains("fixed")) {
      for (const auto& [key, value] : args.at("fixed").items()) {
        fixed.fixed_factors.push_back(std::stoll(key));
        fixed.fixed_values.push_back(value.get<int64_t>());
      }
    }
    export_scatter(latent_scatter_export(model, ds, dims, fixed, n, color_factor, rng),
                   out_dir);
  } else if (analysis == "eigen") {
    int64_t n = args.value("n", std::min<int64_t>(ds.n, 1000));
    export_heatmap(eigenvector_heatmap(model, ds, n, rng), out_dir);
  } else if (analysis == "swap") {
    int64_t row1 = args.value("row1", 0);
    int64_t row2 = args.value("row2", ds.n - 1);
    int64_t num_dims = args.value("num_dims", model.spec().latent_dim);
    Tensor x1 = ds.image_batch({row1});
    Tensor x2 = ds.image_batch({row2});
    export_traversal(dimension_swap_traversal(model, x1, x2, num_dims), out_dir);
  } else if (analysis == "decompose") {
    int64_t row1 = args.value("row1", 0);
    int64_t row2 = args.value("row2", ds.n - 1);
    Tensor x1 = ds.image_batch({row1});
    Tensor x2 = ds.image_batch({row2});
    export_decomposition(composite_decomposition(model, x1, x2), out_dir);
  } else if (analysis == "replay") {
    std::vector<int64_t> rows = args.value("rows", std::vector<int64_t>{});
    if (rows.empty()) {
      int64_t start = args.value("start", 0);
      int64_t count = args.value("count", 4);
      for (int64_t i = 0; i < count; ++i) rows.push_back(start + i);
    }
    CFASL_CHECK_ARG(rows.size() >= 2, "replay needs at least 2 rows");
    std::vector<Tensor> seq;
    for (int64_t r : rows) seq.push_back(ds.image_batch({r}));
    export_replay(sequential_symmetry_replay(model, seq), out_dir);
  } else {
    throw_invalid("unknown analysis '" + analysis +
                  "' (valid: scatter, eigen, swap, decompose, replay)");
  }
}

}  // namespace cfasl
