#ifndef CBN_H
#define CBN_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes; they double as CLI exit codes. */
#define CBN_OK 0
#define CBN_EINVAL 1 /* rejected input: bad arguments, malformed files, failed preconditions */
#define CBN_EFAIL 2  /* runtime failure: numerics, IO, divergence */

typedef struct cbn_model cbn_model;

const char* cbn_version(void);

/* Message for the last failing call on this thread. Valid until the next
 * failing call; never NULL. */
const char* cbn_last_error(void);

/* Frees any char* returned through an out parameter. */
void cbn_string_free(char* s);

/* ---- checkpoints ---- */

int cbn_model_load(const char* path, cbn_model** out);
int cbn_model_save(const cbn_model* model, const char* path);
void cbn_model_free(cbn_model* model);

/* Grid dims, per-layer channels, norms, pooling settings, as JSON. */
int cbn_model_info(const cbn_model* model, char** json_out);

/* ---- constructions ---- */

/* Identity network on the given grid (dims has ndims entries, 1 or 2).
 * pooling_kind is "identity" or "blend_avg3"; input_bound is the K shift
 * budget for keeping ReLUs linear. */
int cbn_identity_model(const int* dims, int ndims, const char* pooling_kind, double beta,
                       int channels, int depth, double input_bound, cbn_model** out);

/* ---- analysis ---- */

/* Per-layer pooled singular spectrum as CSV. */
int cbn_model_spectrum_csv(const cbn_model* model, char** csv_out);

/* Representation-cost bound report as JSON, probing at constant signals. */
int cbn_model_bounds_json(const cbn_model* model, char** json_out);

/* Runs the model on one signal; x has n*c_in entries (channel-blocked, pixels
 * of channel 0 first), y receives n_out*c_out entries. */
int cbn_model_eval(const cbn_model* model, const double* x, size_t x_len, double* y, size_t y_len);

/* ---- signals ---- */

/* Grid resampling by an integer factor per axis. data is channel-blocked with
 * n = prod(dims) pixels per channel. direction_up = 0 keeps every factor-th
 * pixel; 1 extends through the low frequencies. out receives malloc'd data
 * (n_out * channels entries), released by free(). */
int cbn_resample(const int* dims, int ndims, int channels, const double* data, int factor,
                 int direction_up, double** out, size_t* out_len);

/* ---- experiments ---- */

/* Trains per the JSON config, writing manifest/checkpoint/history/spectrum/
 * bounds artifacts into out_dir. On success *manifest_json_out (optional)
 * receives the manifest. */
int cbn_run_experiment(const char* config_json, const char* out_dir, char** manifest_json_out);

/* Generates the dataset named by the config into out_dir as CSV + params. */
int cbn_dataset_generate(const char* config_json, const char* out_dir);

/* ---- verification ---- */

/* Runs the invariant suite. *failures receives the failing check count;
 * *table_out (optional) a plain-text pass/fail table. */
int cbn_selfcheck(int fast, int* failures, char** table_out);

#ifdef __cplusplus
}
#endif

#endif /* CBN_H */
