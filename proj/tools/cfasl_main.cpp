// Command-line front end; all work goes through the cfasl C API.
#include <CLI11.hpp>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "cfasl/cfasl.h"

namespace {

struct ConfigHandle {
  cfasl_config* cfg = cfasl_config_new();
  ~ConfigHandle() { cfasl_config_free(cfg); }
};

struct DatasetHandle {
  cfasl_dataset* ds = nullptr;
  ~DatasetHandle() { cfasl_dataset_free(ds); }
};

struct ModelHandle {
  cfasl_model* model = nullptr;
  ~ModelHandle() { cfasl_model_free(model); }
};

int report_error(int rc, const char* what) {
  std::fprintf(stderr, "cfasl: %s failed: %s\n", what, cfasl_last_error());
  return rc;
}

// Key=value pairs accepted by `--set`, mirroring the config file keys.
int apply_sets(cfasl_config* cfg, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "cfasl: --set expects key=value, got '%s'\n", kv.c_str());
      return CFASL_ERR_INVALID_ARGUMENT;
    }
    int rc = cfasl_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (rc != CFASL_OK) return report_error(rc, "config set");
  }
  return CFASL_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CFASL: symmetry-codebook disentanglement learning for VAEs"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train = app.add_subcommand("train", "Train a model");
  std::string t_config, t_dataset, t_out = "out", t_resume;
  std::vector<std::string> t_sets, t_disable;
  int64_t t_steps = -1, t_batch = -1, t_seed = -1;
  double t_lr = -1, t_beta = -1, t_epsilon = -1, t_threshold = -1, t_temperature = -1;
  std::string t_objective;
  int64_t t_latent = -1, t_elements = -1;
  train->add_option("--config", t_config, "Config file (TOML-style key = value)");
  train->add_option("--dataset", t_dataset, "Dataset directory or .npz archive");
  train->add_option("--out", t_out, "Output directory");
  train->add_option("--resume", t_resume, "Checkpoint to resume from");
  train->add_option("--steps", t_steps, "Training steps");
  train->add_option("--batch-size", t_batch, "Mini-batch size (even)");
  train->add_option("--seed", t_seed, "Random seed");
  train->add_option("--learning-rate", t_lr, "Adam learning rate");
  train->add_option("--beta", t_beta, "Objective beta");
  train->add_option("--objective", t_objective, "beta_vae | beta_tcvae");
  train->add_option("--latent-dim", t_latent, "Latent dimension D (= |S|)");
  train->add_option("--elements", t_elements, "Codebook elements per section |SS|");
  train->add_option("--epsilon", t_epsilon, "Decoder equivariance weight");
  train->add_option("--threshold", t_threshold, "Change-target threshold");
  train->add_option("--temperature", t_temperature, "Gumbel softmax temperature");
  train->add_option("--disable", t_disable,
                    "Disable a loss (parallel, perpendicular, sparsity, commutative, "
                    "prediction, equivariance); repeatable");
  train->add_option("--set", t_sets, "Override any config key, key=value; repeatable");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "Evaluate a disentanglement metric");
  std::string e_checkpoint, e_dataset, e_metric = "fvm", e_report;
  int64_t e_k = 0, e_trials = 800, e_samples = 100, e_seed = 0;
  double e_prune = 0.06;
  eval->add_option("--checkpoint", e_checkpoint, "Checkpoint file")->required();
  eval->add_option("--dataset", e_dataset, "Dataset directory or .npz")->required();
  eval->add_option("--metric", e_metric, "fvm | m_fvm");
  eval->add_option("--k", e_k, "Number of simultaneously fixed factors (m_fvm)");
  eval->add_option("--trials", e_trials, "Vote count");
  eval->add_option("--samples", e_samples, "Samples per vote");
  eval->add_option("--prune", e_prune, "Dimension pruning threshold");
  eval->add_option("--seed", e_seed, "Random seed");
  eval->add_option("--report", e_report, "Path for report.json (default <out>/report.json)");

  // ---- analyze ----
  auto* analyze = app.add_subcommand("analyze", "Export qualitative analyses");
  std::string a_checkpoint, a_dataset, a_name, a_args, a_out = "analysis";
  analyze->add_option("--checkpoint", a_checkpoint, "Checkpoint file")->required();
  analyze->add_option("--dataset", a_dataset, "Dataset directory or .npz")->required();
  analyze->add_option("--analysis", a_name, "scatter | eigen | swap | decompose | replay")
      ->required();
  analyze->add_option("--args", a_args, "JSON object of analysis options");
  analyze->add_option("--out", a_out, "Output directory");

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic factor dataset");
  std::string g_out, g_shapes = "square,ellipse";
  int64_t g_px = 8, g_py = 8, g_scales = 2, g_size = 16, g_seed = 0;
  gen->add_option("--out", g_out, "Output directory")->required();
  gen->add_option("--positions-x", g_px, "Grid positions along x");
  gen->add_option("--positions-y", g_py, "Grid positions along y");
  gen->add_option("--scales", g_scales, "Number of scales");
  gen->add_option("--shapes", g_shapes, "Comma-separated shape kinds");
  gen->add_option("--image-size", g_size, "16, 32 or 64");
  gen->add_option("--seed", g_seed, "Seed recorded in the manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : CFASL_ERR_INVALID_ARGUMENT;
  }

  if (train->parsed()) {
    ConfigHandle cfg;
    if (!t_config.empty()) {
      int rc = cfasl_config_load_file(cfg.cfg, t_config.c_str());
      if (rc != CFASL_OK) return report_error(rc, "config load");
    }
    auto set_if = [&](const char* key, const std::string& v) -> int {
      if (v.empty()) return CFASL_OK;
      int rc = cfasl_config_set(cfg.cfg, key, v.c_str());
      return rc == CFASL_OK ? CFASL_OK : report_error(rc, "config set");
    };
    auto set_num = [&](const char* key, double v, bool is_int) -> int {
      if (v < 0) return CFASL_OK;
      char buf[64];
      if (is_int)
        std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
      else
        std::snprintf(buf, sizeof(buf), "%.17g", v);
      int rc = cfasl_config_set(cfg.cfg, key, buf);
      return rc == CFASL_OK ? CFASL_OK : report_error(rc, "config set");
    };
    int rc = 0;
    if ((rc = set_if("dataset", t_dataset))) return rc;
    if ((rc = set_if("output_dir", t_out))) return rc;
    if ((rc = set_if("objective", t_objective))) return rc;
    if ((rc = set_num("steps", static_cast<double>(t_steps), true))) return rc;
    if ((rc = set_num("batch_size", static_cast<double>(t_batch), true))) return rc;
    if ((rc = set_num("seed", static_cast<double>(t_seed), true))) return rc;
    if ((rc = set_num("learning_rate", t_lr, false))) return rc;
    if ((rc = set_num("beta", t_beta, false))) return rc;
    if ((rc = set_num("latent_dim", static_cast<double>(t_latent), true))) return rc;
    if ((rc = set_num("elements_per_section", static_cast<double>(t_elements), true)))
      return rc;
    if ((rc = set_num("epsilon", t_epsilon, false))) return rc;
    if ((rc = set_num("threshold", t_threshold, false))) return rc;
    if ((rc = set_num("gumbel_temperature", t_temperature, false))) return rc;
    for (const std::string& name : t_disable) {
      rc = cfasl_config_set(cfg.cfg, ("ablation." + name).c_str(), "false");
      if (rc != CFASL_OK) return report_error(rc, "config set");
    }
    if ((rc = apply_sets(cfg.cfg, t_sets))) return rc;

    DatasetHandle ds;
    std::string ds_path = t_dataset;
    if (ds_path.empty()) {
      // Fall back to the config file's dataset key.
      std::string js = cfasl_config_json(cfg.cfg);
      size_t at = js.find("\"dataset\": \"");
      if (at != std::string::npos) {
        at += 12;
        ds_path = js.substr(at, js.find('"', at) - at);
      }
    }
    if (ds_path.empty()) {
      std::fprintf(stderr, "cfasl: no dataset given (use --dataset or the config)\n");
      return CFASL_ERR_INVALID_ARGUMENT;
    }
    rc = cfasl_dataset_open(ds_path.c_str(), &ds.ds);
    if (rc != CFASL_OK) return report_error(rc, "dataset open");

    char* final_ckpt = nullptr;
    rc = cfasl_train(cfg.cfg, ds.ds, t_resume.empty() ? nullptr : t_resume.c_str(),
                     &final_ckpt);
    if (rc != CFASL_OK) return report_error(rc, "train");
    std::printf("training complete; final checkpoint: %s\n", final_ckpt);
    cfasl_string_free(final_ckpt);
    return 0;
  }

  if (eval->parsed()) {
    DatasetHandle ds;
    int rc = cfasl_dataset_open(e_dataset.c_str(), &ds.ds);
    if (rc != CFASL_OK) return report_error(rc, "dataset open");
    ModelHandle model;
    rc = cfasl_model_open(e_checkpoint.c_str(), ds.ds, &model.model);
    if (rc != CFASL_OK) return report_error(rc, "checkpoint open");
    if (e_report.empty()) e_report = "report.json";
    double score = 0;
    rc = cfasl_eval(model.model, ds.ds, e_metric.c_str(), static_cast<int>(e_k),
                    static_cast<int>(e_trials), static_cast<int>(e_samples), e_prune,
                    static_cast<uint64_t>(e_seed), e_report.c_str(), &score);
    if (rc != CFASL_OK) return report_error(rc, "eval");
    if (e_metric == "m_fvm")
      std::printf("%-8s k=%lld  score %.4f  trials %lld  samples %lld  prune %.3f  seed %lld\n",
                  e_metric.c_str(), static_cast<long long>(e_k), score,
                  static_cast<long long>(e_trials), static_cast<long long>(e_samples),
                  e_prune, static_cast<long long>(e_seed));
    else
      std::printf("%-8s score %.4f  trials %lld  samples %lld  prune %.3f  seed %lld\n",
                  e_metric.c_str(), score, static_cast<long long>(e_trials),
                  static_cast<long long>(e_samples), e_prune,
                  static_cast<long long>(e_seed));
    return 0;
  }

  if (analyze->parsed()) {
    DatasetHandle ds;
    int rc = cfasl_dataset_open(a_dataset.c_str(), &ds.ds);
    if (rc != CFASL_OK) return report_error(rc, "dataset open");
    ModelHandle model;
    rc = cfasl_model_open(a_checkpoint.c_str(), ds.ds, &model.model);
    if (rc != CFASL_OK) return report_error(rc, "checkpoint open");
    rc = cfasl_analyze(model.model, ds.ds, a_name.c_str(),
                       a_args.empty() ? nullptr : a_args.c_str(), a_out.c_str());
    if (rc != CFASL_OK) return report_error(rc, "analyze");
    std::printf("analysis '%s' written to %s\n", a_name.c_str(), a_out.c_str());
    return 0;
  }

  if (gen->parsed()) {
    DatasetHandle ds;
    int rc = cfasl_dataset_generate(static_cast<int>(g_px), static_cast<int>(g_py),
                                    static_cast<int>(g_scales), g_shapes.c_str(),
                                    static_cast<int>(g_size),
                                    static_cast<uint64_t>(g_seed), &ds.ds);
    if (rc != CFASL_OK) return report_error(rc, "gen-data");
    rc = cfasl_dataset_save(ds.ds, g_out.c_str());
    if (rc != CFASL_OK) return report_error(rc, "dataset save");
    std::printf("wrote %lld images (%d factors) to %s\n",
                static_cast<long long>(cfasl_dataset_size(ds.ds)),
                cfasl_dataset_num_factors(ds.ds), g_out.c_str());
    return 0;
  }

  return CFASL_ERR_INVALID_ARGUMENT;
}
