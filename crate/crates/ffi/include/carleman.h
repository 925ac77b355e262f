#ifndef CARLEMAN_H
#define CARLEMAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CarlemanDiscretization {
  CARLEMAN_DISCRETIZATION_STANDARD = 0,
  CARLEMAN_DISCRETIZATION_SPARSE = 1,
} CarlemanDiscretization;

typedef enum CarlemanStatus {
  CARLEMAN_STATUS_OK = 0,
  CARLEMAN_STATUS_NULL_POINTER = 1,
  CARLEMAN_STATUS_INVALID_PARAMETER = 2,
  CARLEMAN_STATUS_SINGULAR_STEP = 3,
  CARLEMAN_STATUS_NOT_CONVERGED = 4,
  CARLEMAN_STATUS_DIVERGED = 5,
  CARLEMAN_STATUS_INTERNAL = 6,
} CarlemanStatus;

/**
 * Opaque model handle.
 */
typedef struct CarlemanModel CarlemanModel;

/**
 * Opaque first-moment trajectory handle.
 */
typedef struct CarlemanTrajectory CarlemanTrajectory;

/**
 * Model parameters; `lambda` is the destabilizing coefficient, `t_final` the horizon.
 */
typedef struct CarlemanParams {
  double nu;
  double lambda;
  double a;
  double b;
  double c;
  double t_final;
  double dt;
  uint32_t truncation;
  uint32_t level;
  enum CarlemanDiscretization discretization;
} CarlemanParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *carleman_last_error_message(void);

/**
 * Writes the library defaults into `out`.
 *
 * # Safety
 * `out` must be NULL or point to writable memory for one `CarlemanParams`.
 */
enum CarlemanStatus carleman_params_default(struct CarlemanParams *out_params);

/**
 * Validates `params` and builds a model; the handle is written to `out_model`.
 *
 * # Safety
 * `params` must be NULL or point to a valid `CarlemanParams`; `out_model`
 * must be NULL or writable.
 */
enum CarlemanStatus carleman_model_new(const struct CarlemanParams *params,
                                       struct CarlemanModel **out_model);

/**
 * # Safety
 * `model` must be NULL or a handle from `carleman_model_new` not yet freed.
 */
void carleman_model_free(struct CarlemanModel *model);

/**
 * Integrates the model over `[0, T]`.
 *
 * # Safety
 * `model` must be a live handle; `out_traj` must be NULL or writable.
 */
enum CarlemanStatus carleman_model_solve(const struct CarlemanModel *model,
                                         struct CarlemanTrajectory **out_traj);

/**
 * # Safety
 * `traj` must be NULL or a handle from `carleman_model_solve` not yet freed.
 */
void carleman_trajectory_free(struct CarlemanTrajectory *traj);

/**
 * Number of recorded times (`T / dt + 1`).
 *
 * # Safety
 * `traj` must be a live handle; `out_len` must be NULL or writable.
 */
enum CarlemanStatus carleman_trajectory_len(const struct CarlemanTrajectory *traj, size_t *out_len);

/**
 * Interior node count of the first moment.
 *
 * # Safety
 * `traj` must be a live handle; `out_dim` must be NULL or writable.
 */
enum CarlemanStatus carleman_trajectory_dim(const struct CarlemanTrajectory *traj, size_t *out_dim);

/**
 * Largest Gauss-Seidel sweep count of the solve (1 for back-substitution).
 *
 * # Safety
 * `traj` must be a live handle; `out_sweeps` must be NULL or writable.
 */
enum CarlemanStatus carleman_trajectory_max_sweeps(const struct CarlemanTrajectory *traj,
                                                   size_t *out_sweeps);

/**
 * # Safety
 * `traj` must be a live handle; `out_time` must be NULL or writable.
 */
enum CarlemanStatus carleman_trajectory_time(const struct CarlemanTrajectory *traj,
                                             size_t index,
                                             double *out_time);

/**
 * Copies the first-moment nodal values at time index `index` into `buf`,
 * which must hold exactly `carleman_trajectory_dim` values.
 *
 * # Safety
 * `traj` must be a live handle; `buf` must be NULL or point to `len`
 * writable doubles.
 */
enum CarlemanStatus carleman_trajectory_first_moment(const struct CarlemanTrajectory *traj,
                                                     size_t index,
                                                     double *buf,
                                                     size_t len);

/**
 * Error of the trajectory against the closed form when it applies, else
 * against the fine baseline on level `ref_level` with step `dt_ref`.
 *
 * # Safety
 * `traj` must be a live handle; the output pointers must be NULL or writable.
 */
enum CarlemanStatus carleman_error_norms(const struct CarlemanTrajectory *traj,
                                         uint32_t ref_level,
                                         double dt_ref,
                                         double *out_linf_h,
                                         double *out_l2_v);

/**
 * Closed-form Burgers solution for `b = nu`, `lambda = 0`, `c = 0`.
 */
double carleman_exact_burgers(double t, double x, double nu, double a);

/**
 * Dimension of the sparse tensor space of order `k` on level `level`.
 *
 * # Safety
 * `out_dim` must be NULL or writable.
 */
enum CarlemanStatus carleman_sparse_dim(uint32_t k, uint32_t level, uint64_t *out_dim);

/**
 * `(2^level - 1)^k`; fails when the value does not fit in 64 bits.
 *
 * # Safety
 * `out_dim` must be NULL or writable.
 */
enum CarlemanStatus carleman_standard_dim(uint32_t k, uint32_t level, uint64_t *out_dim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARLEMAN_H */
