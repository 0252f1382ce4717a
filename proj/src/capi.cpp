#include "cfasl/cfasl.h"

#include <cstring>
#include <string>

#include "config.hpp"
#include "datasets.hpp"
#include "model.hpp"
#include "train.hpp"

using namespace cfasl;

struct cfasl_config_s {
  RunConfig cfg;
  std::string json_cache;
};

struct cfasl_dataset_s {
  FactorDataset ds;
};

struct cfasl_model_s {
  std::unique_ptr<Model> model;
  std::string config_json;  // from the checkpoint
};

namespace {

thread_local std::string g_last_error;

int fail(ErrorCode code, const std::string& msg) {
  g_last_error = msg;
  return static_cast<int>(code);
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return CFASL_OK;
  } catch (const Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail(ErrorCode::numerical, e.what());
  }
}

std::vector<ShapeKind> parse_shape_list(const char* list) {
  std::vector<ShapeKind> shapes;
  std::string s = list ? list : "";
  size_t pos = 0;
  while (pos <= s.size()) {
    size_t comma = s.find(',', pos);
    std::string tok = s.substr(pos, comma == std::string::npos ? std::string::npos
                                                               : comma - pos);
    size_t a = tok.find_first_not_of(" \t");
    if (a != std::string::npos) {
      size_t b = tok.find_last_not_of(" \t");
      shapes.push_back(shape_kind_from_string(tok.substr(a, b - a + 1)));
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  CFASL_CHECK_ARG(!shapes.empty(), "shape list is empty");
  return shapes;
}

}  // namespace

extern "C" {

const char* cfasl_version(void) { return "0.1.0"; }

const char* cfasl_last_error(void) { return g_last_error.c_str(); }

cfasl_config* cfasl_config_new(void) { return new cfasl_config_s(); }

void cfasl_config_free(cfasl_config* cfg) { delete cfg; }

int cfasl_config_load_file(cfasl_config* cfg, const char* path) {
  if (!cfg || !path) return fail(ErrorCode::invalid_argument, "null argument");
  return guarded([&] { cfg->cfg = RunConfig::from_toml_file(path); });
}

int cfasl_config_set(cfasl_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(ErrorCode::invalid_argument, "null argument");
  return guarded([&] { cfg->cfg.set_key(key, value); });
}

const char* cfasl_config_json(cfasl_config* cfg) {
  if (!cfg) return "";
  cfg->json_cache = cfg->cfg.to_json();
  return cfg->json_cache.c_str();
}

int cfasl_dataset_generate(int positions_x, int positions_y, int scales,
                           const char* shape_list, int image_size, uint64_t seed,
                           cfasl_dataset** out) {
  if (!out) return fail(ErrorCode::invalid_argument, "null output pointer");
  return guarded([&] {
    SyntheticGrid grid;
    grid.positions_x = positions_x;
    grid.positions_y = positions_y;
    grid.scales = scales;
    grid.shapes = parse_shape_list(shape_list);
    auto ds = std::make_unique<cfasl_dataset_s>();
    ds->ds = generate_synthetic(grid, image_size, seed);
    *out = ds.release();
  });
}

int cfasl_dataset_open(const char* path, cfasl_dataset** out) {
  if (!path || !out) return fail(ErrorCode::invalid_argument, "null argument");
  return guarded([&] {
    auto ds = std::make_unique<cfasl_dataset_s>();
    ds->ds = open_dataset(path);
    *out = ds.release();
  });
}

int cfasl_dataset_save(const cfasl_dataset* ds, const char* dir) {
  if (!ds || !dir) return fail(ErrorCode::invalid_argument, "null argument");
  return guarded([&] { save_dataset(ds->ds, dir); });
}

int cfasl_dataset_subsample(const cfasl_dataset* ds, double fraction, uint64_t seed,
                            cfasl_dataset** out) {
  if (!ds || !out) return fail(ErrorCode::invalid_argument, "null argument");
  return guarded([&] {
    auto sub = std::make_unique<cfasl_dataset_s>();
    sub->ds = subsample(ds->ds, fraction, seed);
    *out = sub.release();
  });
}

void cfasl_dataset_free(cfasl_dataset* ds) { delete ds; }

int64_t cfasl_dataset_size(const cfasl_dataset* ds) { return ds ? ds->ds.n : 0; }

int cfasl_dataset_num_factors(const cfasl_dataset* ds) {
  return ds ? static_cast<int>(ds->ds.num_factors()) : 0;
}

int64_t cfasl_dataset_factor_size(const cfasl_dataset* ds, int factor) {
  if (!ds || factor < 0 || factor >= ds->ds.num_factors()) return 0;
  return ds->ds.factor_sizes[static_cast<size_t>(factor)];
}

int cfasl_dataset_image_size(const cfasl_dataset* ds) {
  return ds ? static_cast<int>(ds->ds.height) : 0;
}

int cfasl_train(const cfasl_config* cfg, const cfasl_dataset* ds,
                const char* resume_checkpoint, char** final_checkpoint_out) {
  if (!cfg || !ds) return fail(ErrorCode::invalid_argument, "null argument");
  return guarded([&] {
    TrainOutputs out =
        cmd_train(cfg->cfg, ds->ds, resume_checkpoint ? resume_checkpoint : "");
    if (final_checkpoint_out) {
      *final_checkpoint_out =
          static_cast<char*>(std::malloc(out.final_checkpoint.size() + 1));
      std::memcpy(*final_checkpoint_out, out.final_checkpoint.c_str(),
                  out.final_checkpoint.size() + 1);
    }
  });
}

void cfasl_string_free(char* s) { std::free(s); }

int cfasl_model_open(const char* checkpoint_path, const cfasl_dataset* ds,
                     cfasl_model** out) {
  if (!checkpoint_path || !ds || !out)
    return fail(ErrorCode::invalid_argument, "null argument");
  return guarded([&] {
    CheckpointData ck = load_checkpoint(checkpoint_path);
    auto m = std::make_unique<cfasl_model_s>();
    m->model = model_from_checkpoint(ck, ds->ds);
    m->config_json = ck.config.to_json();
    *out = m.release();
  });
}

void cfasl_model_free(cfasl_model* model) { delete model; }

int cfasl_eval(const cfasl_model* model, const cfasl_dataset* ds, const char* metric,
               int k, int trials, int samples_per_vote, double prune_threshold,
               uint64_t seed, const char* report_path, double* score_out) {
  if (!model || !ds || !metric) return fail(ErrorCode::invalid_argument, "null argument");
  return guarded([&] {
    MetricReport report =
        cmd_eval(*model->model, ds->ds, metric, k, trials, samples_per_vote,
                 prune_threshold, seed, report_path ? report_path : "",
                 model->config_json);
    if (score_out) *score_out = report.score;
  });
}

int cfasl_analyze(const cfasl_model* model, const cfasl_dataset* ds, const char* analysis,
                  const char* args_json, const char* output_dir) {
  if (!model || !ds || !analysis || !output_dir)
    return fail(ErrorCode::invalid_argument, "null argument");
  return guarded([&] {
    cmd_analyze(*model->model, ds->ds, analysis, args_json ? args_json : "",
                output_dir);
  });
}

}  // extern "C"
