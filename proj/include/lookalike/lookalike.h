/*
 * C interface to the lookalike library.
 *
 * Every fallible call returns an lk_status; on failure lk_last_error() describes the cause
 * for the calling thread until its next failing call. Strings returned through char** out
 * parameters are owned by the caller and released with lk_free_string(). Handles are
 * released with their matching *_free() function; passing NULL to any *_free() is a no-op.
 *
 * Configurations and reports are JSON documents in the same dialect as dataset manifests.
 */
#ifndef LOOKALIKE_H
#define LOOKALIKE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define LK_API __attribute__((visibility("default")))
#else
#define LK_API
#endif

typedef enum lk_status {
    LK_OK = 0,
    LK_ERR_MISSING_FILE = 1,
    LK_ERR_SCHEMA = 2,
    LK_ERR_INVARIANT = 3,
    LK_ERR_IO = 4,
    LK_ERR_DECODE = 5,
    LK_ERR_SHAPE = 6,
    LK_ERR_VIEW_COUNT = 7,
    LK_ERR_DIM_MISMATCH = 8,
    LK_ERR_DOMAIN = 9,
    LK_ERR_DUPLICATE_PAIR = 10,
    LK_ERR_PRECONDITION = 11,
    LK_ERR_DIVERGENCE = 12,
    LK_ERR_UNIVERSE_MISMATCH = 13,
    LK_ERR_DEGENERATE_GEOMETRY = 14,
    LK_ERR_EMPTY_DATASET = 15,
    LK_ERR_NO_PAIRS_REMAINING = 16,
    LK_ERR_VALIDATION = 17,
    LK_ERR_CONFLICT = 18,
    LK_ERR_NOTHING_TO_UNDO = 19,
    LK_ERR_NOT_FOUND = 20,
    LK_ERR_BIND = 21,             /* server address unavailable */
    LK_ERR_INVALID_ARGUMENT = 22, /* NULL handle, bad enum text, out-of-range number */
    LK_ERR_INTERNAL = 23
} lk_status;

typedef struct lk_dataset lk_dataset;
typedef struct lk_model lk_model;
typedef struct lk_server lk_server;

LK_API const char* lk_version(void);
LK_API const char* lk_status_name(lk_status status);
LK_API const char* lk_last_error(void);
LK_API void lk_free_string(char* text);

/* 0 debug, 1 info, 2 warning (default), 3 error, 4 off. Messages go to stderr. */
LK_API lk_status lk_set_log_level(int level);

/* ---- datasets ---------------------------------------------------------------------- */

/* split: "train" or "val". Writes manifest.json and PNG crops under out_dir. */
LK_API lk_status lk_make_toy(const char* out_dir, int n_scenes, uint64_t seed, const char* split);

/* root_override (nullable) replaces the directory that view paths resolve against. */
LK_API lk_status lk_dataset_load(const char* manifest_path, const char* root_override, int check_files,
                                 lk_dataset** out);
LK_API void lk_dataset_free(lk_dataset* dataset);
LK_API size_t lk_dataset_scene_count(const lk_dataset* dataset);
LK_API lk_status lk_dataset_to_json(const lk_dataset* dataset, char** out_json);

/* ---- configuration ----------------------------------------------------------------- */

/* preset: "default" (foundation backbone, full-size encoder) or "toy" (CPU-sized). */
LK_API lk_status lk_run_config_preset(const char* preset, char** out_json);
/* Fills every missing field of a partial run configuration with defaults and validates it. */
LK_API lk_status lk_run_config_normalize(const char* config_json, char** out_json);

/* ---- models ------------------------------------------------------------------------ */

LK_API lk_status lk_model_create(const char* config_json, uint64_t seed, lk_model** out);
LK_API lk_status lk_model_load(const char* checkpoint_path, lk_model** out);
LK_API lk_status lk_model_save(const lk_model* model, const char* checkpoint_path);
LK_API void lk_model_free(lk_model* model);
LK_API lk_status lk_model_score_pair(const lk_model* model, const lk_dataset* dataset, const char* scene_id,
                                     const char* object_a, const char* object_b, int views, double* out_score);

typedef void (*lk_step_fn)(int step, double triplet, double align, double total, void* user);

/* Trains in place. out_dir receives checkpoint.ckpt, loss.csv and run_config.json. With
 * resume != 0 the model is replaced by the checkpoint in out_dir and training continues. */
LK_API lk_status lk_train(lk_model* model, const lk_dataset* dataset, const char* config_json, const char* out_dir,
                          int resume, lk_step_fn on_step, void* user);

/* Writes <out_dir>/<scene_id>.json per scene; out_summary_json (nullable) lists the files. */
LK_API lk_status lk_predict(const lk_model* model, const lk_dataset* dataset, int views, int workers,
                            const char* out_dir, char** out_summary_json);

/* ---- evaluation -------------------------------------------------------------------- */

/* Reads every *.json prediction document in pred_dir. With overlaps_path (nullable) the
 * predicted-instance protocol is used: instances are associated at `threshold` (greedy, or
 * optimal when optimal != 0) and GT pairs losing a member count as Unknown. */
LK_API lk_status lk_evaluate(const lk_dataset* ground_truth, const char* pred_dir, const char* overlaps_path,
                             double threshold, int optimal, char** out_report_json);

/* ---- co-segmentation --------------------------------------------------------------- */

/* Aligns source onto target, transfers labels with k nearest neighbours, writes the labeled
 * target to out_path (text format) and reports transform and residual. */
LK_API lk_status lk_cosegment(const char* source_path, const char* target_path, const char* out_path, int yaw_bins,
                              int k, int max_iters, char** out_report_json);

/* ---- annotation server ------------------------------------------------------------- */

typedef struct lk_server_options {
    const char* host;       /* default "127.0.0.1" */
    int port;               /* 0 picks a free port */
    const char* static_dir; /* nullable: UI bundle served at / */
    const char* review_dir; /* nullable: prediction documents enabling review order */
    double t1;              /* review thresholds */
    double t2;
} lk_server_options;

LK_API void lk_server_options_init(lk_server_options* options);
/* Replays log_path (created when absent) and binds; LK_ERR_BIND when the port is taken. */
LK_API lk_status lk_server_create(const lk_dataset* dataset, const char* log_path, const lk_server_options* options,
                                  lk_server** out);
LK_API int lk_server_port(const lk_server* server);
/* Blocks until lk_server_stop() is called from another thread. */
LK_API lk_status lk_server_run(lk_server* server);
LK_API void lk_server_stop(lk_server* server);
LK_API void lk_server_free(lk_server* server);

#ifdef __cplusplus
}
#endif

#endif /* LOOKALIKE_H */
