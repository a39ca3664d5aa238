#ifndef SPECTRAL_KL_H
#define SPECTRAL_KL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes. The numeric values of the problem-level codes agree with
 the exit codes of the command line tool.
 */
typedef enum SklStatus {
  SKL_STATUS_OK = 0,
  SKL_STATUS_INVALID_INPUT = 1,
  SKL_STATUS_INFEASIBLE = 2,
  SKL_STATUS_NONSINGULAR_A = 3,
  SKL_STATUS_NOT_A_FIXED_POINT = 6,
  SKL_STATUS_NULL_POINTER = 10,
  SKL_STATUS_BUFFER_TOO_SMALL = 11,
  SKL_STATUS_NUMERICAL = 12,
  SKL_STATUS_PANIC = 13,
} SklStatus;

typedef enum SklTermination {
  SKL_TERMINATION_CONVERGED = 0,
  SKL_TERMINATION_MAX_ITERATIONS = 1,
  SKL_TERMINATION_BOUNDARY_APPROACH = 2,
} SklTermination;

/*
 A normalized problem: filter bank, prior and solver settings.
 */
typedef struct SklProblem SklProblem;

/*
 Result of `skl_solve`.
 */
typedef struct SklReport SklReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread, or null. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *skl_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *skl_version(void);

/*
 Parses a JSON problem configuration and normalizes it. A nonzero
 `allow_nonsingular_a` waives the requirement that `A` be singular.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SklStatus skl_problem_from_json(const char *json,
                                     int allow_nonsingular_a,
                                     struct SklProblem **out);

/*
 Releases a problem. Null is ignored.

 # Safety
 `p` must come from `skl_problem_from_json` and not be used afterwards.
 */
void skl_problem_free(struct SklProblem *p);

/*
 State dimension `n`, or 0 for a null handle.

 # Safety
 `p` must be null or a live problem handle.
 */
uintptr_t skl_problem_dim(const struct SklProblem *p);

/*
 Feasibility of the normalized problem. Writes 1 or 0 to `feasible` and
 the dimension of the null space of the moment map to `n_perp`.

 # Safety
 All pointers must be valid.
 */
enum SklStatus skl_feasibility(const struct SklProblem *p, int *feasible, uintptr_t *n_perp);

/*
 Runs the fixed-point iteration with the settings from the configuration.
 `max_iters` overrides the iteration budget when nonzero.

 # Safety
 `p` must be a live problem handle and `out` a valid pointer.
 */
enum SklStatus skl_solve(const struct SklProblem *p, uintptr_t max_iters, struct SklReport **out);

/*
 Releases a report. Null is ignored.

 # Safety
 `r` must come from `skl_solve` and not be used afterwards.
 */
void skl_report_free(struct SklReport *r);

/*
 1 when the limit satisfies the optimality conditions, 0 otherwise or for
 a null handle.

 # Safety
 `r` must be null or a live report handle.
 */
int skl_report_converged(const struct SklReport *r);

/*
 # Safety
 `r` must be null or a live report handle.
 */
uintptr_t skl_report_iterations(const struct SklReport *r);

/*
 # Safety
 `r` must be a live report handle.
 */
enum SklTermination skl_report_termination(const struct SklReport *r);

/*
 Final constraint residual `‖M(Λ̂) − I‖_F`, NaN for a null handle.

 # Safety
 `r` must be null or a live report handle.
 */
double skl_report_residual(const struct SklReport *r);

/*
 Copies `Λ̂` into `re` and `im`, each of length at least `n * n`, row major.

 # Safety
 `re` and `im` must point to `len` writable doubles.
 */
enum SklStatus skl_report_lambda(const struct SklReport *r, double *re, double *im, uintptr_t len);

/*
 Samples `Φ̂ = Ψ / G*Λ̂G` on `grid` equally spaced angles `2πk/grid`.

 # Safety
 `phi` must point to `grid` writable doubles.
 */
enum SklStatus skl_report_spectrum(const struct SklProblem *p,
                                   const struct SklReport *r,
                                   uintptr_t grid,
                                   double *phi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPECTRAL_KL_H */
