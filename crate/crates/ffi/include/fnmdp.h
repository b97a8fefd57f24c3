#ifndef FNMDP_H
#define FNMDP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FnmdpStatus {
  FNMDP_STATUS_OK = 0,
  FNMDP_STATUS_NULL_POINTER = 1,
  FNMDP_STATUS_INVALID_ARGUMENT = 2,
  FNMDP_STATUS_CONFIG = 3,
  FNMDP_STATUS_NUMERICAL = 4,
  FNMDP_STATUS_IO = 5,
  FNMDP_STATUS_CHECKPOINT = 6,
  FNMDP_STATUS_PANIC = 7,
} FnmdpStatus;

/**
 * Method codes accepted by [`fnmdp_run`].
 */
typedef enum FnmdpMethod {
  FNMDP_METHOD_FANSRL = 0,
  FNMDP_METHOD_ORACLE = 1,
  FNMDP_METHOD_SAC = 2,
} FnmdpMethod;

/**
 * Simulator handle.
 */
typedef struct FnmdpEnv FnmdpEnv;

/**
 * Online change-factor filter; owns a copy of the model it was made from.
 */
typedef struct FnmdpFilter FnmdpFilter;

/**
 * Trained FN-VAE handle.
 */
typedef struct FnmdpModel FnmdpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fnmdp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fnmdp_version(void);

/**
 * Builds a simulator from an `env` config section, e.g.
 * `{"kind": "tracking", "horizon": 50}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FnmdpStatus fnmdp_env_new(const char *json, uint64_t seed, struct FnmdpEnv **out);

/**
 * # Safety
 * `env` must come from [`fnmdp_env_new`] and not be used afterwards.
 */
void fnmdp_env_free(struct FnmdpEnv *env);

/**
 * Writes the state, action, θˢ and θʳ widths; any pointer may be null.
 *
 * # Safety
 * `env` must be a live handle; non-null outputs must be valid.
 */
enum FnmdpStatus fnmdp_env_dims(struct FnmdpEnv *env,
                                uintptr_t *d,
                                uintptr_t *m,
                                uintptr_t *p,
                                uintptr_t *q);

/**
 * Starts an episode and writes the initial state into `s_out[0..d]`.
 *
 * # Safety
 * `env` must be a live handle and `s_out` hold `d` doubles.
 */
enum FnmdpStatus fnmdp_env_reset(struct FnmdpEnv *env, double *s_out, uintptr_t d);

/**
 * Applies action `a[0..m]`, writing the next state, reward and whether the
 * episode ended.
 *
 * # Safety
 * `env` must be a live handle; `a` holds `m` doubles, `s_out` holds `d`,
 * and `reward`/`done` are valid pointers.
 */
enum FnmdpStatus fnmdp_env_step(struct FnmdpEnv *env,
                                const double *a,
                                uintptr_t m,
                                double *s_out,
                                uintptr_t d,
                                double *reward,
                                bool *done);

/**
 * Loads an FN-VAE checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FnmdpStatus fnmdp_model_load(const char *path, struct FnmdpModel **out);

/**
 * # Safety
 * `model` must come from [`fnmdp_model_load`] and not be used afterwards.
 */
void fnmdp_model_free(struct FnmdpModel *model);

/**
 * Serializes the graph read from the model's masks at `threshold` as JSON
 * into `buf`. `needed` receives the byte count including the terminating
 * NUL; a buffer that is null or too small yields `InvalidArgument` with
 * `needed` still set.
 *
 * # Safety
 * `model` must be a live handle, `buf` valid for `len` bytes when non-null,
 * and `needed` valid.
 */
enum FnmdpStatus fnmdp_model_graph_json(struct FnmdpModel *model,
                                        double threshold,
                                        char *buf,
                                        uintptr_t len,
                                        uintptr_t *needed);

/**
 * Creates a change-factor filter from a copy of `model`.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum FnmdpStatus fnmdp_filter_new(struct FnmdpModel *model, struct FnmdpFilter **out);

/**
 * # Safety
 * `filter` must come from [`fnmdp_filter_new`] and not be used afterwards.
 */
void fnmdp_filter_free(struct FnmdpFilter *filter);

/**
 * Clears the filter's recurrent state.
 *
 * # Safety
 * `filter` must be a live handle.
 */
enum FnmdpStatus fnmdp_filter_reset(struct FnmdpFilter *filter);

/**
 * Feeds one step `(s, a, r)` and writes the posterior means of θˢ
 * (`p` entries) and θʳ (`q` entries).
 *
 * # Safety
 * `filter` must be a live handle and every array valid for its length.
 */
enum FnmdpStatus fnmdp_filter_observe(struct FnmdpFilter *filter,
                                      const double *s,
                                      uintptr_t d,
                                      const double *a,
                                      uintptr_t m,
                                      double r,
                                      double *theta_s_out,
                                      uintptr_t p,
                                      double *theta_r_out,
                                      uintptr_t q);

/**
 * Runs one method (an [`FnmdpMethod`] code) on an experiment config document and writes the mean
 * return over the configured final episodes.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string and `final_return` valid.
 */
enum FnmdpStatus fnmdp_run(const char *config_json,
                           uint32_t method,
                           uint64_t seed,
                           double *final_return);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FNMDP_H */
