#ifndef SPDNET_H
#define SPDNET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpdnetStatus {
  SPDNET_STATUS_OK = 0,
  SPDNET_STATUS_INVALID_ARGUMENT = 1,
  SPDNET_STATUS_DOMAIN = 2,
  SPDNET_STATUS_NUMERIC = 3,
  SPDNET_STATUS_STATE = 4,
  SPDNET_STATUS_FORMAT = 5,
  SPDNET_STATUS_CONFIG = 6,
  SPDNET_STATUS_IO = 7,
  SPDNET_STATUS_NULL_POINTER = 8,
  SPDNET_STATUS_PANIC = 9,
} SpdnetStatus;

typedef enum SpdnetMetric {
  SPDNET_METRIC_LOG_EUCLIDEAN = 0,
  SPDNET_METRIC_AFFINE_INVARIANT = 1,
} SpdnetMetric;

/**
 * A loaded trial archive.
 */
typedef struct SpdnetArchive SpdnetArchive;

/**
 * A loaded network.
 */
typedef struct SpdnetModel SpdnetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *spdnet_last_error_message(void);

/**
 * Reads an `SPT1` archive.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SpdnetStatus spdnet_archive_load(const char *path, struct SpdnetArchive **out);

/**
 * # Safety
 * `archive` must come from [`spdnet_archive_load`] and not be freed twice.
 */
void spdnet_archive_free(struct SpdnetArchive *archive);

/**
 * # Safety
 * `archive` must be a live handle; the out pointers must be writable or null.
 */
enum SpdnetStatus spdnet_archive_shape(const struct SpdnetArchive *archive,
                                       size_t *n_trials,
                                       size_t *n_electrodes,
                                       size_t *n_samples,
                                       size_t *n_classes);

/**
 * # Safety
 * `archive` must be a live handle and `out` writable.
 */
enum SpdnetStatus spdnet_archive_label(const struct SpdnetArchive *archive,
                                       size_t trial,
                                       size_t *out);

/**
 * Reads a model file written by `spdnet train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SpdnetStatus spdnet_model_load(const char *path, struct SpdnetModel **out);

/**
 * # Safety
 * `model` must come from [`spdnet_model_load`] and not be freed twice.
 */
void spdnet_model_free(struct SpdnetModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum SpdnetStatus spdnet_model_n_classes(const struct SpdnetModel *model, size_t *out);

/**
 * Predicted class of one archived trial.
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
enum SpdnetStatus spdnet_model_predict(const struct SpdnetModel *model,
                                       const struct SpdnetArchive *archive,
                                       size_t trial,
                                       size_t *out);

/**
 * Predicted class of a raw trial given as `n_electrodes` rows of
 * `n_samples` values.
 *
 * # Safety
 * `data` must hold `n_electrodes * n_samples` values; `out` must be writable.
 */
enum SpdnetStatus spdnet_model_predict_raw(const struct SpdnetModel *model,
                                           const double *data,
                                           size_t n_electrodes,
                                           size_t n_samples,
                                           double fs_hz,
                                           size_t *out);

/**
 * Sample covariance of a trial (`n_electrodes` rows of `n_samples`
 * values), written row-major into `out` (`n_electrodes²` values).
 *
 * # Safety
 * `data` and `out` must hold the stated number of values.
 */
enum SpdnetStatus spdnet_scm(const double *data,
                             size_t n_electrodes,
                             size_t n_samples,
                             double *out,
                             size_t out_len);

/**
 * Riemannian distance between two SPD matrices given row-major.
 *
 * # Safety
 * `a` and `b` must each hold `n * n` values; `out` must be writable.
 */
enum SpdnetStatus spdnet_distance(const double *a,
                                  const double *b,
                                  size_t n,
                                  enum SpdnetMetric metric,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPDNET_H */
