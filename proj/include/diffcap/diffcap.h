/* Copyright 2026 The diffcap Authors
 * SPDX-License-Identifier: Apache-2.0 */

#ifndef DIFFCAP_DIFFCAP_H_
#define DIFFCAP_DIFFCAP_H_

#include <stddef.h>
#include <stdint.h>

#if defined(DIFFCAP_BUILDING)
#define DIFFCAP_API __attribute__((visibility("default")))
#else
#define DIFFCAP_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum diffcap_status {
  DIFFCAP_OK = 0,
  DIFFCAP_ERR_ARGUMENT = 1,   /* bad argument or flag value */
  DIFFCAP_ERR_CONFIG = 2,     /* invalid configuration */
  DIFFCAP_ERR_IO = 3,         /* file missing or unwritable */
  DIFFCAP_ERR_FORMAT = 4,     /* malformed input file */
  DIFFCAP_ERR_DIVERGENCE = 5, /* non-finite values during training or generation */
  DIFFCAP_ERR_INTERNAL = 6
} diffcap_status;

/* Message of the last failed call on this thread; never NULL. */
DIFFCAP_API const char* diffcap_last_error(void);
DIFFCAP_API const char* diffcap_status_name(diffcap_status status);
/* Process exit code for a status: 0 success, 2 divergence, 1 otherwise. */
DIFFCAP_API int diffcap_exit_code(diffcap_status status);
DIFFCAP_API const char* diffcap_version(void);

/* ---- noise schedule ---------------------------------------------------- */

typedef struct diffcap_schedule diffcap_schedule;

/* kind: "linear" or "cosine". */
DIFFCAP_API diffcap_status diffcap_schedule_create(const char* kind, int T, double beta_start,
                                                   double beta_end, diffcap_schedule** out);
DIFFCAP_API diffcap_status diffcap_schedule_from_config(const char* config_path,
                                                        diffcap_schedule** out);
DIFFCAP_API void diffcap_schedule_free(diffcap_schedule* s);
DIFFCAP_API int diffcap_schedule_length(const diffcap_schedule* s);
/* t in [1, T]; any output pointer may be NULL. */
DIFFCAP_API diffcap_status diffcap_schedule_at(const diffcap_schedule* s, int t, double* beta,
                                               double* alpha, double* alpha_bar);
/* Tab-separated t/beta/alpha/alpha_bar table with a header row. Copies at most
 * `cap` bytes including the terminator into `buf`; `*needed` receives the full
 * size including the terminator. */
DIFFCAP_API diffcap_status diffcap_schedule_table(const diffcap_schedule* s, char* buf,
                                                  size_t cap, size_t* needed);

/* ---- trained model ----------------------------------------------------- */

typedef struct diffcap_model diffcap_model;

typedef struct diffcap_gen_options {
  int stages;        /* <= 0: checkpoint default */
  int deterministic; /* < 0: checkpoint default, 0: stochastic, 1: deterministic */
  double w;          /* < 0: checkpoint default */
  uint64_t seed;
} diffcap_gen_options;

DIFFCAP_API void diffcap_gen_options_init(diffcap_gen_options* opts);
DIFFCAP_API diffcap_status diffcap_model_load(const char* checkpoint_dir, diffcap_model** out);
DIFFCAP_API void diffcap_model_free(diffcap_model* m);
DIFFCAP_API int diffcap_model_feature_dim(const diffcap_model* m);
DIFFCAP_API int diffcap_model_vocab_size(const diffcap_model* m);
/* Captions one feature vector of diffcap_model_feature_dim floats. Buffer
 * semantics as in diffcap_schedule_table. `forward_passes` may be NULL. */
DIFFCAP_API diffcap_status diffcap_model_caption(const diffcap_model* m, const float* features,
                                                 size_t dim, const diffcap_gen_options* opts,
                                                 char* buf, size_t cap, size_t* needed,
                                                 uint64_t* forward_passes);

/* ---- commands (file in, files out) ------------------------------------- */

DIFFCAP_API diffcap_status diffcap_make_toy_data(int scenes, int dim, uint64_t seed,
                                                 const char* out_dir);

typedef struct diffcap_train_result {
  int epochs_run;
  int steps;
  int stopped_early;
  int best_epoch;
} diffcap_train_result;

/* overrides: `n_overrides` strings of the form "section.key=value".
 * seed: NULL keeps the configured seed. result may be NULL. */
DIFFCAP_API diffcap_status diffcap_train(const char* config_path, const char* out_dir,
                                         const char* const* overrides, size_t n_overrides,
                                         const uint64_t* seed, int resume,
                                         diffcap_train_result* result);

/* Writes <out_dir>/captions.jsonl. `only` selects a subset of keys (may be
 * NULL when n_only is 0). `written` may be NULL. */
DIFFCAP_API diffcap_status diffcap_generate(const char* checkpoint_dir, const char* features_path,
                                            const char* keys_path, const char* const* only,
                                            size_t n_only, const diffcap_gen_options* opts,
                                            const char* out_dir, size_t* written);

typedef struct diffcap_eval_result {
  double bleu4;
  double brevity_penalty;
  long n;
} diffcap_eval_result;

/* Writes <out_dir>/report.json and <out_dir>/sentences.csv. */
DIFFCAP_API diffcap_status diffcap_evaluate(const char* checkpoint_dir, const char* dataset_path,
                                            const char* features_path, int stages, uint64_t seed,
                                            const char* out_dir, diffcap_eval_result* result);

/* Writes <out_dir>/schedule.tsv and a manifest; out_dir may be NULL. */
DIFFCAP_API diffcap_status diffcap_inspect_schedule(const char* config_path, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* DIFFCAP_DIFFCAP_H_ */
