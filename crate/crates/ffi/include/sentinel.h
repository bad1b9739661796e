#ifndef SENTINEL_H
#define SENTINEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result codes.
 */
typedef enum SentinelStatus {
  SENTINEL_STATUS_OK = 0,
  SENTINEL_STATUS_NULL_POINTER = 1,
  SENTINEL_STATUS_INVALID_UTF8 = 2,
  SENTINEL_STATUS_CONFIG = 3,
  SENTINEL_STATUS_DATA = 4,
  SENTINEL_STATUS_PROVIDER = 5,
  SENTINEL_STATUS_MODEL = 6,
  SENTINEL_STATUS_BUFFER_TOO_SMALL = 7,
  SENTINEL_STATUS_PANIC = 8,
} SentinelStatus;

/*
 A loaded linear model.
 */
typedef struct SentinelModel SentinelModel;

/*
 A loaded two-step pipeline with its embedding provider and deployments.
 */
typedef struct SentinelPipeline SentinelPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failure on this thread, or null. Valid until the
 next failing call on the same thread.
 */
const char *sentinel_last_error(void);

/*
 Library version as a static string.
 */
const char *sentinel_version(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not have been freed.
 */
void sentinel_string_free(char *s);

/*
 Classical preprocessing; `out` receives a JSON array of tokens.

 # Safety
 `text` must be a NUL-terminated string; `out` must be writable.
 */
enum SentinelStatus sentinel_preprocess_classical(const char *text, char **out);

/*
 Minimal preprocessing (mentions, URLs and emoji normalized).

 # Safety
 `text` must be a NUL-terminated string; `out` must be writable.
 */
enum SentinelStatus sentinel_preprocess_minimal(const char *text, char **out);

/*
 Balanced class weights for a JSON array of labels; `out` receives a JSON
 object mapping label to weight.

 # Safety
 `labels_json` must be a NUL-terminated string; `out` must be writable.
 */
enum SentinelStatus sentinel_class_weights(const char *labels_json, char **out);

/*
 Cyclic hour-of-day encoding.

 # Safety
 `sin_out` and `cos_out` must be writable.
 */
enum SentinelStatus sentinel_hour_encoding(uint32_t hour, double *sin_out, double *cos_out);

/*
 Days to election and hour encoding for an RFC 3339 timestamp and a
 `YYYY-MM-DD` election date.

 # Safety
 String arguments must be NUL-terminated; out pointers must be writable.
 */
enum SentinelStatus sentinel_temporal_features(const char *timestamp,
                                               const char *election_date,
                                               int32_t utc_offset_minutes,
                                               uint32_t *days_out,
                                               double *sin_out,
                                               double *cos_out);

/*
 Loads a model JSON file.

 # Safety
 `path` must be NUL-terminated; `out` must be writable.
 */
enum SentinelStatus sentinel_model_load(const char *path, struct SentinelModel **out);

/*
 # Safety
 `model` must come from [`sentinel_model_load`] and not have been freed.
 */
void sentinel_model_free(struct SentinelModel *model);

/*
 Feature dimension, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t sentinel_model_dim(const struct SentinelModel *model);

/*
 Number of classes, or 0 for a null handle.

 # Safety
 `model` must be null or a live handle.
 */
size_t sentinel_model_n_classes(const struct SentinelModel *model);

/*
 Label name for a class index, owned by the handle; null if out of range.

 # Safety
 `model` must be null or a live handle.
 */
const char *sentinel_model_label(const struct SentinelModel *model, size_t index);

/*
 Scores one dense row. `scores_out` must hold `n_classes` values.

 # Safety
 `row` must point to `len` readable doubles and `scores_out` to
 `scores_len` writable doubles.
 */
enum SentinelStatus sentinel_model_predict(const struct SentinelModel *model,
                                           const double *row,
                                           size_t len,
                                           size_t *label_out,
                                           double *scores_out,
                                           size_t scores_len);

/*
 Loads a pipeline bundle. `fixtures` may be null for pipelines that do not
 use embeddings. The built-in Kenyan and Nigerian deployments are known;
 others can be added with [`sentinel_pipeline_add_deployment`].

 # Safety
 `bundle_dir` must be NUL-terminated, `fixtures` null or NUL-terminated,
 `out` writable.
 */
enum SentinelStatus sentinel_pipeline_load(const char *bundle_dir,
                                           const char *fixtures,
                                           struct SentinelPipeline **out);

/*
 # Safety
 `pipeline` must come from [`sentinel_pipeline_load`] and not have been freed.
 */
void sentinel_pipeline_free(struct SentinelPipeline *pipeline);

/*
 Registers a deployment (its JSON mapping file contents), replacing any
 with the same name.

 # Safety
 `pipeline` must be a live handle; `deployment_json` NUL-terminated.
 */
enum SentinelStatus sentinel_pipeline_add_deployment(struct SentinelPipeline *pipeline,
                                                     const char *deployment_json);

/*
 Classifies JSONL reports. Context is drawn from the same batch. `out`
 receives a JSON array of decisions, each with the report `id`.

 # Safety
 `pipeline` must be a live handle; `reports_jsonl` NUL-terminated; `out`
 writable.
 */
enum SentinelStatus sentinel_pipeline_classify(const struct SentinelPipeline *pipeline,
                                               const char *reports_jsonl,
                                               char **out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SENTINEL_H */
