#ifndef PULSEFRONT_H
#define PULSEFRONT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PfFrontPath {
  PF_FRONT_PATH_KPP = 0,
  PF_FRONT_PATH_GENERAL = 1,
} PfFrontPath;

/**
 * Result codes.
 */
typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_UTF8 = 2,
  /**
   * Invalid configuration or argument.
   */
  PF_STATUS_CONFIG = 3,
  /**
   * A stated precondition does not hold.
   */
  PF_STATUS_PRECONDITION = 4,
  /**
   * Out of the admissible domain (e.g. subcritical speed).
   */
  PF_STATUS_DOMAIN = 5,
  /**
   * Iteration failure, loss of positivity or non-convergence.
   */
  PF_STATUS_NUMERICAL = 6,
  /**
   * Caller buffer too small.
   */
  PF_STATUS_BUFFER_TOO_SMALL = 7,
  PF_STATUS_PANIC = 8,
} PfStatus;

/**
 * Zero-order term of the linearization.
 */
typedef enum PfZeroOrder {
  PF_ZERO_ORDER_MU = 0,
  PF_ZERO_ORDER_ETA = 1,
} PfZeroOrder;

/**
 * Opaque medium handle.
 */
typedef struct PfMedium PfMedium;

/**
 * Summary of a front computation.
 */
typedef struct PfFrontReport {
  size_t iters;
  double outer_defect;
  double monotone_defect;
  double sandwich_defect;
  double tail_slope;
  double lam;
  double right_limit_error;
} PfFrontReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a TOML medium description into a new handle stored in `*out`.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum PfStatus pf_medium_from_toml(const char *toml, struct PfMedium **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `m` must come from [`pf_medium_from_toml`] and not be freed twice.
 */
void pf_medium_free(struct PfMedium *m);

/**
 * Torus node counts of the medium.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PfStatus pf_medium_grid(const struct PfMedium *m, size_t *nt, size_t *nx);

/**
 * Principal eigenvalue `k` of the operator twisted by `lambda` in the
 * medium's direction.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PfStatus pf_eigen(const struct PfMedium *m, double lambda, enum PfZeroOrder z, double *k);

/**
 * Minimal speed `c*` and its minimizer.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PfStatus pf_minimal_speed(const struct PfMedium *m,
                               enum PfZeroOrder z,
                               double eps,
                               double *c_star,
                               double *lambda_star);

/**
 * Decay exponents `lam <= Lam` at speed `c`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PfStatus pf_decay_roots(const struct PfMedium *m,
                             enum PfZeroOrder z,
                             double eps,
                             double c,
                             double *lam,
                             double *big_lam);

/**
 * Periodic state `p` written t-major into `values` (`len >= nt * nx`).
 *
 * # Safety
 * `values` must hold `len` doubles; `residual` may be null.
 */
enum PfStatus pf_equilibrium(const struct PfMedium *m,
                             double *values,
                             size_t len,
                             double *residual);

/**
 * Front profile on the cylinder of half-length `a`; fills `report`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PfStatus pf_front(const struct PfMedium *m,
                       double c,
                       double eps,
                       double a,
                       enum PfFrontPath path,
                       struct PfFrontReport *report);

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next call on the same thread.
 */
const char *pf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PULSEFRONT_H */
