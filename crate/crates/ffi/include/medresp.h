#ifndef MEDRESP_H
#define MEDRESP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MrStatus {
  MR_STATUS_OK = 0,
  MR_STATUS_NULL_POINTER = 1,
  MR_STATUS_INVALID_ARGUMENT = 2,
  MR_STATUS_CONFIG = 3,
  MR_STATUS_IO = 4,
  MR_STATUS_NUMERICAL = 5,
  MR_STATUS_PANIC = 6,
} MrStatus;

/**
 * Orthonormal basis for the span of a set of spatial maps.
 */
typedef struct MrBasis MrBasis;

/**
 * Dense row-major matrix of doubles.
 */
typedef struct MrMatrix MrMatrix;

/**
 * Trained binary SVM on a precomputed kernel.
 */
typedef struct MrSvmModel MrSvmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next `mr_*` call on the same thread.
 */
const char *mr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mr_version(void);

/**
 * Copies `rows * cols` row-major values into a new matrix. NaN and
 * infinite values are rejected.
 *
 * # Safety
 * `data` must point to `rows * cols` doubles; `out` must be writable.
 */
enum MrStatus mr_matrix_new(size_t rows, size_t cols, const double *data, struct MrMatrix **out);

/**
 * Reads a matrix container file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MrStatus mr_matrix_read(const char *path, struct MrMatrix **out);

/**
 * # Safety
 * `m` must be a live matrix handle and `path` a NUL-terminated string.
 */
enum MrStatus mr_matrix_write(const struct MrMatrix *m, const char *path);

/**
 * Number of rows, or 0 for NULL.
 *
 * # Safety
 * `m` must be NULL or a live matrix handle.
 */
size_t mr_matrix_rows(const struct MrMatrix *m);

/**
 * Number of columns, or 0 for NULL.
 *
 * # Safety
 * `m` must be NULL or a live matrix handle.
 */
size_t mr_matrix_cols(const struct MrMatrix *m);

/**
 * Copies the row-major values into `buf`, which must hold `rows * cols`.
 *
 * # Safety
 * `m` must be a live matrix handle; `buf` must have room for `len` doubles.
 */
enum MrStatus mr_matrix_copy(const struct MrMatrix *m, double *buf, size_t len);

/**
 * # Safety
 * `m` must be NULL or a handle not yet freed.
 */
void mr_matrix_free(struct MrMatrix *m);

/**
 * Orthonormal basis for the span of the rows of `maps` (`K × V`).
 *
 * # Safety
 * `maps` must be a live matrix handle; `out` must be writable.
 */
enum MrStatus mr_basis_new(const struct MrMatrix *maps, struct MrBasis **out);

/**
 * # Safety
 * `b` must be NULL or a handle not yet freed.
 */
void mr_basis_free(struct MrBasis *b);

/**
 * Sum of principal-angle cosines between two bases of equal shape.
 *
 * # Safety
 * `a`, `b` must be live basis handles; `out` must be writable.
 */
enum MrStatus mr_pabs_similarity(const struct MrBasis *a, const struct MrBasis *b, double *out);

/**
 * `tanh(gamma * similarity)`.
 *
 * # Safety
 * As for [`mr_pabs_similarity`].
 */
enum MrStatus mr_pabs_kernel(const struct MrBasis *a,
                             const struct MrBasis *b,
                             double gamma,
                             double *out);

/**
 * Correlation matrix of the columns of `tc` (`T × K`), optionally after
 * removing each column's linear trend.
 *
 * # Safety
 * `tc` must be a live matrix handle; `out` must be writable.
 */
enum MrStatus mr_fnc_compute(const struct MrMatrix *tc, int detrend, struct MrMatrix **out);

/**
 * Step-wise average precision; `labels[i]` nonzero marks a positive.
 *
 * # Safety
 * `labels` and `scores` must each point to `n` elements.
 */
enum MrStatus mr_average_precision(const uint8_t *labels,
                                   const double *scores,
                                   size_t n,
                                   double *out);

/**
 * Trains a binary SVM on an `n × n` precomputed kernel with labels ±1.
 * `class_weighted` nonzero scales each class's bound by `n / (2 n_class)`.
 *
 * # Safety
 * `kernel` must be a live handle, `y` must point to `n` doubles and `out`
 * must be writable.
 */
enum MrStatus mr_svm_train(const struct MrMatrix *kernel,
                           const double *y,
                           size_t n,
                           double c,
                           int class_weighted,
                           uint64_t seed,
                           struct MrSvmModel **out);

/**
 * Decision values for the rows of a test-by-train kernel block; `out`
 * must hold one value per row.
 *
 * # Safety
 * `model` and `k_test_train` must be live handles; `out` must have room for
 * `len` doubles.
 */
enum MrStatus mr_svm_decision(const struct MrSvmModel *model,
                              const struct MrMatrix *k_test_train,
                              double *out,
                              size_t len);

/**
 * Dual objective of the trained model on its training kernel.
 *
 * # Safety
 * `model` and `kernel` must be live handles; `out` must be writable.
 */
enum MrStatus mr_svm_dual_objective(const struct MrSvmModel *model,
                                    const struct MrMatrix *kernel,
                                    double *out);

/**
 * Bias term of the decision function.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
double mr_svm_bias(const struct MrSvmModel *model);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void mr_svm_free(struct MrSvmModel *model);

/**
 * Validates a JSON run configuration (NULL or "" means all defaults).
 *
 * # Safety
 * `config_json` must be NULL or a NUL-terminated string.
 */
enum MrStatus mr_config_validate(const char *config_json);

/**
 * Runs the whole pipeline (simulate through report) into `out_dir`.
 *
 * # Safety
 * `config_json` must be NULL or a NUL-terminated string; `out_dir` must be
 * a NUL-terminated path.
 */
enum MrStatus mr_pipeline_run(const char *config_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEDRESP_H */
