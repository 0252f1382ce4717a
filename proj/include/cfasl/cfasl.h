/* CFASL C API: disentanglement learning with a trainable symmetry codebook.
 *
 * All functions return CFASL_OK (0) on success or one of the error codes
 * below; cfasl_last_error() describes the most recent failure on the calling
 * thread. Objects are opaque handles released with their _free function.
 */
#ifndef CFASL_H
#define CFASL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CFASL_API __declspec(dllexport)
#else
#define CFASL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

enum {
  CFASL_OK = 0,
  CFASL_ERR_INVALID_ARGUMENT = 2,
  CFASL_ERR_NUMERICAL = 3,
  CFASL_ERR_IO = 4
};

typedef struct cfasl_config_s cfasl_config;
typedef struct cfasl_dataset_s cfasl_dataset;
typedef struct cfasl_model_s cfasl_model;

CFASL_API const char* cfasl_version(void);
/* Message for the last failing call on this thread; empty string if none. */
CFASL_API const char* cfasl_last_error(void);

/* ---- configuration ---------------------------------------------------- */

CFASL_API cfasl_config* cfasl_config_new(void);
CFASL_API void cfasl_config_free(cfasl_config* cfg);
/* Loads a TOML-style key = value file over the defaults. */
CFASL_API int cfasl_config_load_file(cfasl_config* cfg, const char* path);
/* Sets one key from its string form (same keys as the config file). */
CFASL_API int cfasl_config_set(cfasl_config* cfg, const char* key, const char* value);
/* JSON snapshot of the configuration; the buffer is owned by the config and
 * valid until the next call on it. */
CFASL_API const char* cfasl_config_json(cfasl_config* cfg);

/* ---- datasets ---------------------------------------------------------- */

/* Renders the exhaustive synthetic shape grid. shape_list is a
 * comma-separated subset of square,ellipse,triangle. */
CFASL_API int cfasl_dataset_generate(int positions_x, int positions_y, int scales,
                                     const char* shape_list, int image_size,
                                     uint64_t seed, cfasl_dataset** out);
/* Opens a dataset directory (manifest.json) or an .npz factor archive. */
CFASL_API int cfasl_dataset_open(const char* path, cfasl_dataset** out);
CFASL_API int cfasl_dataset_save(const cfasl_dataset* ds, const char* dir);
CFASL_API int cfasl_dataset_subsample(const cfasl_dataset* ds, double fraction,
                                      uint64_t seed, cfasl_dataset** out);
CFASL_API void cfasl_dataset_free(cfasl_dataset* ds);

CFASL_API int64_t cfasl_dataset_size(const cfasl_dataset* ds);
CFASL_API int cfasl_dataset_num_factors(const cfasl_dataset* ds);
CFASL_API int64_t cfasl_dataset_factor_size(const cfasl_dataset* ds, int factor);
CFASL_API int cfasl_dataset_image_size(const cfasl_dataset* ds);

/* ---- training ---------------------------------------------------------- */

/* Runs the training loop; writes losses.csv and checkpoint-<step> files into
 * the config's output_dir. resume_checkpoint may be NULL or empty. On
 * success *final_checkpoint_out (if non-NULL) receives the final checkpoint
 * path (caller frees with cfasl_string_free). */
CFASL_API int cfasl_train(const cfasl_config* cfg, const cfasl_dataset* ds,
                          const char* resume_checkpoint, char** final_checkpoint_out);
CFASL_API void cfasl_string_free(char* s);

/* ---- checkpoints and evaluation ---------------------------------------- */

CFASL_API int cfasl_model_open(const char* checkpoint_path, const cfasl_dataset* ds,
                               cfasl_model** out);
CFASL_API void cfasl_model_free(cfasl_model* model);

/* metric is "fvm" (k must be 0) or "m_fvm" (2 <= k <= factors-1). Writes
 * report.json to report_path when non-NULL; the score lands in *score_out. */
CFASL_API int cfasl_eval(const cfasl_model* model, const cfasl_dataset* ds,
                         const char* metric, int k, int trials, int samples_per_vote,
                         double prune_threshold, uint64_t seed, const char* report_path,
                         double* score_out);

/* analysis is one of scatter, eigen, swap, decompose, replay; args_json is a
 * JSON object of analysis-specific options (may be NULL). */
CFASL_API int cfasl_analyze(const cfasl_model* model, const cfasl_dataset* ds,
                            const char* analysis, const char* args_json,
                            const char* output_dir);

#ifdef __cplusplus
}
#endif

#endif /* CFASL_H */
