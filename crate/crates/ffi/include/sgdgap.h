#ifndef SGDGAP_H
#define SGDGAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SgdStatus {
  SGD_STATUS_OK = 0,
  SGD_STATUS_NULL_POINTER = 1,
  SGD_STATUS_INVALID_ARGUMENT = 2,
  SGD_STATUS_CONVERGENCE = 3,
  SGD_STATUS_IO = 4,
  SGD_STATUS_PARSE = 5,
  SGD_STATUS_PANIC = 6,
} SgdStatus;

typedef enum SgdGapMode {
  SGD_GAP_MODE_EXACT = 0,
  SGD_GAP_MODE_FIRST_ORDER = 1,
} SgdGapMode;

typedef enum SgdShiftMode {
  SGD_SHIFT_MODE_DEFINITION = 0,
  SGD_SHIFT_MODE_CLOSED_FORM = 1,
} SgdShiftMode;

/**
 * Opaque batch handle.
 */
typedef struct SgdBatch SgdBatch;

/**
 * Opaque model handle.
 */
typedef struct SgdModel SgdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message on this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length, or 0 if none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sgd_last_error_message(char *buf, size_t len);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum SgdStatus sgd_model_linear(size_t input_dim, struct SgdModel **out);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum SgdStatus sgd_model_mlp(size_t input_dim,
                             size_t hidden,
                             uint64_t init_seed,
                             struct SgdModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this API not yet freed.
 */
void sgd_model_free(struct SgdModel *model);

/**
 * Number of parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sgd_model_param_count(const struct SgdModel *model);

/**
 * Writes the default initial parameters into `out`.
 *
 * # Safety
 * `model` must be a live handle and `out` must hold `len` doubles.
 */
enum SgdStatus sgd_model_init_params(const struct SgdModel *model, double *out, size_t len);

/**
 * Builds a batch from row-major `inputs` (n × d) and `targets` (n), with ids
 * `first_id..first_id + n`.
 *
 * # Safety
 * `inputs` must hold `n * d` doubles, `targets` `n` doubles, `out` a handle slot.
 */
enum SgdStatus sgd_batch_new(const double *inputs,
                             const double *targets,
                             size_t n,
                             size_t d,
                             uint64_t first_id,
                             struct SgdBatch **out);

/**
 * # Safety
 * `batch` must be null or a handle from this API not yet freed.
 */
void sgd_batch_free(struct SgdBatch *batch);

/**
 * # Safety
 * `batch` must be null or a live handle.
 */
size_t sgd_batch_len(const struct SgdBatch *batch);

/**
 * # Safety
 * `a` and `b` must be live handles, `out` writable.
 */
enum SgdStatus sgd_overlap_factor(const struct SgdBatch *a, const struct SgdBatch *b, double *out);

/**
 * Samples disjoint train and test sets from the linear-Gaussian generator
 * with teacher e₁.
 *
 * # Safety
 * `train` and `test` must be handle slots.
 */
enum SgdStatus sgd_sample_realization(size_t d,
                                      double noise_std,
                                      size_t n_train,
                                      size_t n_test,
                                      uint64_t seed,
                                      struct SgdBatch **train,
                                      struct SgdBatch **test);

/**
 * Splits `batch` into two disjoint halves by a seeded shuffle.
 *
 * # Safety
 * `batch` must be a live handle; `first` and `second` handle slots.
 */
enum SgdStatus sgd_partition_halves(const struct SgdBatch *batch,
                                    uint64_t seed,
                                    struct SgdBatch **first,
                                    struct SgdBatch **second);

/**
 * # Safety
 * Handles must be live; `theta` holds `len` doubles; `out` writable.
 */
enum SgdStatus sgd_batch_loss(const struct SgdModel *model,
                              const double *theta_ptr,
                              size_t len,
                              const struct SgdBatch *batch,
                              double *out);

/**
 * # Safety
 * Handles must be live; `theta` and `out` hold `len` doubles.
 */
enum SgdStatus sgd_batch_grad(const struct SgdModel *model,
                              const double *theta_ptr,
                              size_t len,
                              const struct SgdBatch *batch,
                              double *out);

/**
 * Batch Hessian applied to `v`.
 *
 * # Safety
 * Handles must be live; `theta`, `v` and `out` hold `len` doubles.
 */
enum SgdStatus sgd_batch_hvp(const struct SgdModel *model,
                             const double *theta_ptr,
                             const double *v,
                             size_t len,
                             const struct SgdBatch *batch,
                             double *out);

/**
 * Closed-form tr Σ for the linear model under the generator with teacher e₁.
 *
 * # Safety
 * `theta` holds `d` doubles; `out` writable.
 */
enum SgdStatus sgd_oracle_trace(const double *theta_ptr, size_t d, double noise_std, double *out);

/**
 * Closed-form ∇ tr Σ for the linear model under the generator with teacher e₁.
 *
 * # Safety
 * `theta` and `out` hold `d` doubles.
 */
enum SgdStatus sgd_oracle_grad_trace(const double *theta_ptr,
                                     size_t d,
                                     double noise_std,
                                     double *out);

/**
 * Change in test-minus-train loss after one GD step on `train`.
 *
 * # Safety
 * Handles must be live; `theta` holds `len` doubles; `out` writable.
 */
enum SgdStatus sgd_delta_gap(const struct SgdModel *model,
                             const double *theta_ptr,
                             size_t len,
                             const struct SgdBatch *train,
                             const struct SgdBatch *test,
                             double eta,
                             enum SgdGapMode mode,
                             double *out);

/**
 * Gradient shift of two SGD steps on `b` then `c` relative to one GD step
 * on their union.
 *
 * # Safety
 * Handles must be live; `theta` and `out` hold `len` doubles.
 */
enum SgdStatus sgd_gradient_shift(const struct SgdModel *model,
                                  const double *theta_ptr,
                                  size_t len,
                                  const struct SgdBatch *b,
                                  const struct SgdBatch *c,
                                  double eta,
                                  enum SgdShiftMode mode,
                                  double *out);

/**
 * Least-squares slope of log residual against log η.
 *
 * # Safety
 * `etas` and `residuals` hold `n` doubles; `out` writable.
 */
enum SgdStatus sgd_order_exponent(const double *etas,
                                  const double *residuals,
                                  size_t n,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SGDGAP_H */
