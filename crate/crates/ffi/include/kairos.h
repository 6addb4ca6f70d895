#ifndef KAIROS_H
#define KAIROS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum KairosStatus {
  KAIROS_STATUS_OK = 0,
  KAIROS_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument or configuration.
   */
  KAIROS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Unreadable or malformed input data.
   */
  KAIROS_STATUS_DATA = 3,
  /**
   * Non-finite numbers or a diverged computation.
   */
  KAIROS_STATUS_NUMERIC = 4,
  KAIROS_STATUS_PANIC = 5,
} KairosStatus;

typedef struct KairosManifest KairosManifest;

typedef struct KairosModel KairosModel;

typedef struct KairosPolicy KairosPolicy;

typedef struct KairosSession KairosSession;

typedef struct KairosTrace KairosTrace;

/**
 * Controller and player settings. Start from [`kairos_params_default`].
 */
typedef struct KairosParams {
  size_t lookahead;
  double lambda;
  double mu;
  double alpha;
  double beta;
  double buffer_floor;
  double gamma_cap;
  double buffer_max;
  size_t hm_window;
  size_t robust_horizon;
  double rtt;
  double start_offset;
} KairosParams;

/**
 * One completed download, as input to [`kairos_model_predict`].
 */
typedef struct KairosObservation {
  double throughput;
  double buffer;
  double rebuffer;
  double latency;
  double completed_at;
} KairosObservation;

typedef struct KairosQoe {
  double utility;
  double rebuffer_penalty;
  double smoothness_penalty;
  double average;
  double total;
} KairosQoe;

/**
 * One chunk of a simulated session. `point` and `estimate` are NaN when the
 * controller did not produce them.
 */
typedef struct KairosChunk {
  size_t index;
  size_t level;
  double bitrate;
  double size;
  double start;
  double end;
  double duration;
  double throughput;
  double rebuffer;
  double buffer_before;
  double buffer_after;
  double sleep;
  double point;
  double estimate;
} KairosChunk;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, static NUL-terminated string.
 */
const char *kairos_version(void);

/**
 * Message for the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *kairos_last_error(void);

void kairos_clear_error(void);

/**
 * # Safety
 * `out` must be writable.
 */
enum KairosStatus kairos_params_default(struct KairosParams *out);

/**
 * Loads a `time bandwidth` text trace.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `out` writable.
 */
enum KairosStatus kairos_trace_load(const char *path, struct KairosTrace **out);

/**
 * Builds a trace from `n` (time s, bandwidth Mbps) samples.
 *
 * # Safety
 * `id` NUL-terminated; `times` and `mbps` hold `n` values; `out` writable.
 */
enum KairosStatus kairos_trace_from_samples(const char *id,
                                            const double *times,
                                            const double *mbps,
                                            size_t n,
                                            struct KairosTrace **out);

/**
 * # Safety
 * `trace` is NULL or a live handle, not used afterwards.
 */
void kairos_trace_free(struct KairosTrace *trace);

/**
 * # Safety
 * `trace` is NULL or a live handle.
 */
size_t kairos_trace_sample_count(const struct KairosTrace *trace);

/**
 * # Safety
 * `trace` live, `out` writable.
 */
enum KairosStatus kairos_trace_mean_bandwidth(const struct KairosTrace *trace, double *out);

/**
 * The built-in six-rung ladder.
 *
 * # Safety
 * `out` writable.
 */
enum KairosStatus kairos_manifest_default(struct KairosManifest **out);

/**
 * Constant-bitrate manifest: chunk size is rung bitrate times duration.
 *
 * # Safety
 * `ladder` holds `levels` values; `out` writable.
 */
enum KairosStatus kairos_manifest_new(const double *ladder,
                                      size_t levels,
                                      double chunk_duration,
                                      size_t num_chunks,
                                      struct KairosManifest **out);

/**
 * # Safety
 * `path` NUL-terminated, `out` writable.
 */
enum KairosStatus kairos_manifest_load(const char *path, struct KairosManifest **out);

/**
 * # Safety
 * `manifest` is NULL or a live handle, not used afterwards.
 */
void kairos_manifest_free(struct KairosManifest *manifest);

/**
 * # Safety
 * `manifest` is NULL or a live handle.
 */
size_t kairos_manifest_levels(const struct KairosManifest *manifest);

/**
 * # Safety
 * `manifest` is NULL or a live handle.
 */
size_t kairos_manifest_num_chunks(const struct KairosManifest *manifest);

/**
 * Loads a trained checkpoint.
 *
 * # Safety
 * `path` NUL-terminated, `out` writable.
 */
enum KairosStatus kairos_model_load(const char *path, struct KairosModel **out);

/**
 * # Safety
 * `model` is NULL or a live handle, not used afterwards.
 */
void kairos_model_free(struct KairosModel *model);

/**
 * Number of quantile levels the model predicts.
 *
 * # Safety
 * `model` is NULL or a live handle.
 */
size_t kairos_model_quantile_count(const struct KairosModel *model);

/**
 * Predicts next-chunk throughput quantiles (Mbps, ascending level order)
 * from the session history so far, oldest first. Writes
 * `kairos_model_quantile_count` values into `out`.
 *
 * # Safety
 * `history` holds `n` values; `out` has room for `capacity` doubles.
 */
enum KairosStatus kairos_model_predict(const struct KairosModel *model,
                                       const struct KairosObservation *history,
                                       size_t n,
                                       double chunk_duration,
                                       double *out,
                                       size_t capacity);

/**
 * Named controller: `hm-mpc`, `robust-hm-mpc` or `bola` (model ignored),
 * `kairos` or `kairos-na` (model required).
 *
 * # Safety
 * `name` NUL-terminated; `model` NULL or live; `out` writable.
 */
enum KairosStatus kairos_policy_new(const char *name,
                                    const struct KairosModel *model,
                                    struct KairosPolicy **out);

/**
 * # Safety
 * `policy` is NULL or a live handle, not used afterwards.
 */
void kairos_policy_free(struct KairosPolicy *policy);

/**
 * Buffer-aware throughput estimate from the 0.1 and 0.5 quantiles.
 *
 * # Safety
 * `params` NULL (defaults) or readable; `out` writable.
 */
enum KairosStatus kairos_adjust_prediction(double q10,
                                           double q50,
                                           double buffer,
                                           const struct KairosParams *params,
                                           double *out);

/**
 * Ladder index chosen by the lookahead planner. `prev_level < 0` means no
 * chunk has been played yet.
 *
 * # Safety
 * `manifest` live; `params` NULL or readable; `out` writable.
 */
enum KairosStatus kairos_mpc_decide(const struct KairosManifest *manifest,
                                    const struct KairosParams *params,
                                    double buffer,
                                    int64_t prev_level,
                                    size_t next_chunk,
                                    double estimate,
                                    size_t *out);

/**
 * Plays the whole video over `trace`.
 *
 * # Safety
 * Handles live; `params` NULL or readable; `out` writable.
 */
enum KairosStatus kairos_simulate(const struct KairosTrace *trace,
                                  const struct KairosManifest *manifest,
                                  const struct KairosPolicy *policy,
                                  const struct KairosParams *params,
                                  struct KairosSession **out);

/**
 * Plays the clairvoyant plan found by dynamic programming over buffer
 * buckets of `resolution` seconds.
 *
 * # Safety
 * Handles live; `params` NULL or readable; `out` writable.
 */
enum KairosStatus kairos_offline_optimal(const struct KairosTrace *trace,
                                         const struct KairosManifest *manifest,
                                         const struct KairosParams *params,
                                         double resolution,
                                         struct KairosSession **out);

/**
 * # Safety
 * `session` is NULL or a live handle, not used afterwards.
 */
void kairos_session_free(struct KairosSession *session);

/**
 * # Safety
 * `session` is NULL or a live handle.
 */
size_t kairos_session_chunk_count(const struct KairosSession *session);

/**
 * # Safety
 * `session` live; `out` writable.
 */
enum KairosStatus kairos_session_qoe(const struct KairosSession *session, struct KairosQoe *out);

/**
 * Wall-clock seconds from the first request to the end of the last idle.
 *
 * # Safety
 * `session` live; `out` writable.
 */
enum KairosStatus kairos_session_wall_time(const struct KairosSession *session, double *out);

/**
 * # Safety
 * `session` live; `out` writable.
 */
enum KairosStatus kairos_session_chunk(const struct KairosSession *session,
                                       size_t index,
                                       struct KairosChunk *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KAIROS_H */
