#ifndef INVENTROPY_H
#define INVENTROPY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum InvStatus {
  INV_STATUS_OK = 0,
  INV_STATUS_NULL_POINTER = 1,
  INV_STATUS_INVALID_UTF8 = 2,
  INV_STATUS_CONFIG = 3,
  INV_STATUS_INVALID_ARGUMENT = 4,
  INV_STATUS_NUMERICAL = 5,
  INV_STATUS_IO = 6,
  INV_STATUS_PANIC = 7,
} InvStatus;

/**
 * A piecewise-constant control signal.
 */
typedef struct InvControl InvControl;

/**
 * A control-affine system.
 */
typedef struct InvSystem InvSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *inv_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *inv_version(void);

/**
 * Parses a system from `key = value` text (`dim`, `inputs`,
 * `field.<i>.<j>`, `u.lo`, `u.hi`).
 *
 * # Safety
 * `config` must be a NUL-terminated string and `out` a valid pointer.
 */
enum InvStatus inv_system_from_config(const char *config, struct InvSystem **out);

/**
 * # Safety
 * `sys` must come from this library (or be NULL) and not be used afterwards.
 */
void inv_system_free(struct InvSystem *sys);

/**
 * State dimension, 0 for NULL.
 *
 * # Safety
 * `sys` must be a handle from this library or NULL.
 */
size_t inv_system_dim(const struct InvSystem *sys);

/**
 * Number of inputs, 0 for NULL.
 *
 * # Safety
 * `sys` must be a handle from this library or NULL.
 */
size_t inv_system_inputs(const struct InvSystem *sys);

/**
 * Control with `steps` values of `inputs(sys)` numbers each (row-major),
 * step length `step`, repeated periodically when `periodic` is nonzero.
 *
 * # Safety
 * `values` must hold `steps * inputs(sys)` doubles; `out` must be valid.
 */
enum InvStatus inv_control_new(const struct InvSystem *sys,
                               double step,
                               const double *values,
                               size_t steps,
                               int32_t periodic,
                               struct InvControl **out);

/**
 * # Safety
 * `u` must come from this library (or be NULL) and not be used afterwards.
 */
void inv_control_free(struct InvControl *u);

/**
 * Writes `phi(tau, x0, u)` (`dim(sys)` doubles) to `x_out`.
 *
 * # Safety
 * `x0` and `x_out` must hold `dim(sys)` doubles.
 */
enum InvStatus inv_integrate(const struct InvSystem *sys,
                             const struct InvControl *u,
                             const double *x0,
                             double tau,
                             double *x_out);

/**
 * Exterior-power cocycle `alpha_tau(u, x0)`.
 *
 * # Safety
 * `x0` must hold `dim(sys)` doubles and `out` be valid.
 */
enum InvStatus inv_alpha(const struct InvSystem *sys,
                         const struct InvControl *u,
                         const double *x0,
                         double tau,
                         double *out);

/**
 * `log |det Phi(tau)|` on the full tangent space.
 *
 * # Safety
 * `x0` must hold `dim(sys)` doubles and `out` be valid.
 */
enum InvStatus inv_log_det(const struct InvSystem *sys,
                           const struct InvControl *u,
                           const double *x0,
                           double tau,
                           double *out);

/**
 * `max_j sigma_1 ... sigma_j` of a row-major `d x d` matrix and the maximizing `j`.
 *
 * # Safety
 * `m` must hold `d * d` doubles; `norm_out` and `j_out` must be valid.
 */
enum InvStatus inv_exterior_norm(const double *m, size_t d, double *norm_out, size_t *j_out);

/**
 * Upper-route estimate (exterior cocycle over periodic witnesses) on the
 * box `[q_lo, q_hi]` with default search settings and the given seed.
 *
 * # Safety
 * `q_lo`, `q_hi` must hold `dim(sys)` doubles and `out` be valid.
 */
enum InvStatus inv_upper_bound(const struct InvSystem *sys,
                               const double *q_lo,
                               const double *q_hi,
                               uint64_t seed,
                               double *out);

/**
 * Lower-route estimate (unstable determinant on verified hyperbolic
 * periodic witnesses) on `[q_lo, q_hi]`.
 *
 * # Safety
 * `q_lo`, `q_hi` must hold `dim(sys)` doubles and `out` be valid.
 */
enum InvStatus inv_lower_bound(const struct InvSystem *sys,
                               const double *q_lo,
                               const double *q_hi,
                               uint64_t seed,
                               double *out);

/**
 * Upper and lower routes as a JSON report. Release the string with
 * [`inv_string_free`].
 *
 * # Safety
 * `q_lo`, `q_hi` must hold `dim(sys)` doubles and `json_out` be valid.
 */
enum InvStatus inv_entropy_report_json(const struct InvSystem *sys,
                                       const double *q_lo,
                                       const double *q_hi,
                                       uint64_t seed,
                                       char **json_out);

/**
 * # Safety
 * `s` must come from this library (or be NULL) and not be used afterwards.
 */
void inv_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INVENTROPY_H */
