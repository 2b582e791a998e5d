#ifndef DFPE_H
#define DFPE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DFPE_STRATEGY_ANSWER_PATTERN 0

#define DFPE_STRATEGY_EXTERNAL_EMBEDDING 1

#define DFPE_ORDER_FILTER_THEN_CLUSTER 0

#define DFPE_ORDER_CLUSTER_THEN_FILTER 1

#define DFPE_AGGREGATION_POOLED 0

#define DFPE_AGGREGATION_SUBJECT_MEAN 1

#define DFPE_METHOD_BSM 0

#define DFPE_METHOD_BSMOV 1

#define DFPE_METHOD_MVOTING 2

#define DFPE_METHOD_DFPE 3

/**
 * Result of every call. Zero is success; failures are negative.
 */
typedef enum DfpeStatus {
  DFPE_STATUS_OK = 0,
  DFPE_STATUS_NULL_ARGUMENT = -1,
  DFPE_STATUS_INVALID_UTF8 = -2,
  /**
   * Bad input file, record or parameter.
   */
  DFPE_STATUS_INVALID_INPUT = -3,
  /**
   * Failure while running.
   */
  DFPE_STATUS_RUNTIME = -4,
  /**
   * The session has not been evaluated yet.
   */
  DFPE_STATUS_NOT_EVALUATED = -5,
  /**
   * Unknown subject or question.
   */
  DFPE_STATUS_NOT_FOUND = -6,
  DFPE_STATUS_PANIC = -7,
} DfpeStatus;

/**
 * Opaque session handle.
 */
typedef struct DfpeSession DfpeSession;

/**
 * Run parameters. Enumerated fields take the `DFPE_STRATEGY_*` and
 * `DFPE_ORDER_*` constants.
 */
typedef struct DfpeConfig {
  double quantile_q;
  double gamma;
  double dbscan_eps;
  size_t dbscan_min_pts;
  int32_t fingerprint_strategy;
  int32_t filter_order;
  uint64_t seed;
} DfpeConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL after a
 * success. Valid until the next call on the same thread.
 */
const char *dfpe_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dfpe_version(void);

/**
 * Writes the default run parameters to `out`.
 *
 * # Safety
 * `out` must be NULL or point to writable memory for one `DfpeConfig`.
 */
enum DfpeStatus dfpe_config_default(struct DfpeConfig *out);

/**
 * Writes a named preset (`optimal`, `balanced` or `efficient`) to `out`.
 * `config_path` is an optional TOML run config; its values are the base
 * the preset overrides, and its `[efficient]` table defines `efficient`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `config_path` NULL or one;
 * `out` NULL or writable for one `DfpeConfig`.
 */
enum DfpeStatus dfpe_config_preset(const char *name,
                                   const char *config_path,
                                   struct DfpeConfig *out);

/**
 * Loads input files into a new session. `disciplines` and `embeddings`
 * may be NULL.
 *
 * # Safety
 * Path arguments must be NULL or NUL-terminated strings; `out` must be
 * NULL or writable for one pointer. The handle is released with
 * `dfpe_session_free`.
 */
enum DfpeStatus dfpe_session_open(const char *dataset,
                                  const char *predictions,
                                  const char *disciplines,
                                  const char *embeddings,
                                  struct DfpeSession **out);

/**
 * Releases a session. NULL is ignored.
 *
 * # Safety
 * `session` must be NULL or a handle from `dfpe_session_open` that has
 * not been freed.
 */
void dfpe_session_free(struct DfpeSession *session);

/**
 * Number of models in the pool and number of subjects.
 *
 * # Safety
 * `session` must be a live handle; the out pointers NULL or writable.
 */
enum DfpeStatus dfpe_session_counts(const struct DfpeSession *session,
                                    size_t *models,
                                    size_t *subjects);

/**
 * Builds the ensembles and evaluates every method on the test split.
 * `aggregation` is one of the `DFPE_AGGREGATION_*` constants.
 *
 * # Safety
 * `session` must be a live handle and `config` NULL or a valid pointer.
 */
enum DfpeStatus dfpe_session_evaluate(struct DfpeSession *session,
                                      const struct DfpeConfig *config,
                                      int32_t aggregation);

/**
 * Overall and discipline-mean test accuracy of one method
 * (`DFPE_METHOD_*`) from the last evaluation.
 *
 * # Safety
 * `session` must be a live handle; the out pointers NULL or writable.
 */
enum DfpeStatus dfpe_session_accuracy(const struct DfpeSession *session,
                                      int32_t method_code,
                                      double *overall,
                                      double *discipline_mean);

/**
 * Mean ensemble size over subjects from the last evaluation.
 *
 * # Safety
 * `session` must be a live handle; `out` NULL or writable.
 */
enum DfpeStatus dfpe_session_mean_members(const struct DfpeSession *session, double *out);

/**
 * Ensemble answer for one test question. `*out` is set to NULL when no
 * member answered it.
 *
 * # Safety
 * `session` must be a live handle; `subject` and `question` NUL-terminated
 * strings; `out` NULL or writable for one pointer.
 */
enum DfpeStatus dfpe_session_answer(const struct DfpeSession *session,
                                    const char *subject,
                                    const char *question,
                                    char **out);

/**
 * The full evaluation report as JSON.
 *
 * # Safety
 * `session` must be a live handle; `out` NULL or writable for one pointer.
 */
enum DfpeStatus dfpe_session_report_json(const struct DfpeSession *session, char **out);

/**
 * The per-subject ensembles as JSON.
 *
 * # Safety
 * As for `dfpe_session_report_json`.
 */
enum DfpeStatus dfpe_session_ensembles_json(const struct DfpeSession *session, char **out);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must be NULL or a pointer from one of the `char**` outputs above
 * that has not been freed.
 */
void dfpe_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DFPE_H */
