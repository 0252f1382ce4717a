#pragma once

#include <memory>
#include <string>

#include "config.hpp"
#include "datasets.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace cfasl {

/// Checkpoint payload: config snapshot, step counters, RNG state and all
/// parameters with their Adam moments.
struct CheckpointData {
  RunConfig config;
  int64_t step = 0;
  int64_t adam_steps = 0;
  std::string rng_state;
  struct ParamSnapshot {
    std::string name;
    Tensor value, m, v;
  };
  std::vector<ParamSnapshot> params;
};

void save_checkpoint(const std::string& path, const RunConfig& cfg, const Model& model,
                     const Adam& opt, const Rng& rng, int64_t step);
CheckpointData load_checkpoint(const std::string& path);

Model::Spec spec_from_config(const RunConfig& cfg, const FactorDataset& ds);
/// Rebuilds a model from a checkpoint; image geometry comes from the stored
/// parameter shapes (validated against the provided dataset by the caller).
std::unique_ptr<Model> model_from_checkpoint(const CheckpointData& ck,
                                             const FactorDataset& ds);

/// One CFASL training process: pair batching, the full composite step and a
/// single Adam update per step. The dataset must outlive the trainer.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const FactorDataset& ds);
  Trainer(const CheckpointData& ck, const FactorDataset& ds);  // resume

  LossBreakdown step();
  int64_t current_step() const { return step_; }
  const RunConfig& config() const { return cfg_; }
  Model& model() { return *model_; }
  const Model& model() const { return *model_; }
  const std::vector<int64_t>& last_batch_indices() const { return last_indices_; }
  void save(const std::string& path) const;

 private:
  RunConfig cfg_;
  const FactorDataset* ds_;
  std::unique_ptr<Model> model_;
  Adam opt_;
  Rng rng_;
  int64_t step_ = 0;
  std::vector<int64_t> last_indices_;
};

struct TrainOutputs {
  std::string final_checkpoint;
  std::string losses_csv;
  int64_t steps_run = 0;
};

/// Runs the training loop to cfg.steps, logging every step to losses.csv and
/// checkpointing every checkpoint_every steps and at the end. A NaN in any
/// loss aborts with a numerical error after writing nan_dump.json.
TrainOutputs cmd_train(const RunConfig& cfg, const FactorDataset& ds,
                       const std::string& resume_checkpoint = "");

/// Runs fvm or m_fvm against a trained model and writes report.json.
/// k must be 0 for fvm and valid for m_fvm.
MetricReport cmd_eval(const Model& model, const FactorDataset& ds,
                      const std::string& metric, int64_t k, int64_t trials,
                      int64_t samples_per_vote, double prune_threshold, uint64_t seed,
                      const std::string& report_path,
                      const std::string& config_json = "");

/// Dispatches one analysis by name (scatter, eigen, swap, decompose, replay)
/// with a JSON argument object, writing exports into out_dir.
void cmd_analyze(const Model& model, const FactorDataset& ds, const std::string& analysis,
                 const std::string& args_json, const std::string& out_dir);

}  // namespace cfasl
