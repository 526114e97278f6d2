#ifndef PEXPRK_H
#define PEXPRK_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PEXPRK_PARTITION_NONE 0

#define PEXPRK_PARTITION_SPECIES 1

#define PEXPRK_PARTITION_SPACE 2

#define PEXPRK_PARTITION_PHYSICS 3

#define PEXPRK_PARTITION_IMEX 4

#define PEXPRK_JACOBIAN_FULL 0

#define PEXPRK_JACOBIAN_BLOCK 1

#define PEXPRK_FORM_ORIG 0

#define PEXPRK_FORM_TRAN 1

#define PEXPRK_FORM_PART 2

/**
 * Number of order-condition residuals written by
 * [`pexprk_check_order`].
 */
#define PEXPRK_NUM_CONDITIONS 9

typedef enum PexprkStatus {
  PEXPRK_STATUS_OK = 0,
  PEXPRK_STATUS_NULL_POINTER = 1,
  PEXPRK_STATUS_INVALID_ARGUMENT = 2,
  PEXPRK_STATUS_NUMERICAL = 3,
  PEXPRK_STATUS_IO = 4,
  PEXPRK_STATUS_PANIC = 5,
} PexprkStatus;

/**
 * A right-hand side split into partitions, with its initial state.
 */
typedef struct PexprkProblem PexprkProblem;

/**
 * A stepping method.
 */
typedef struct PexprkStepper PexprkStepper;

/**
 * Work counters of an integration.
 */
typedef struct PexprkStats {
  size_t steps;
  size_t matvecs;
  size_t krylov_dims;
} PexprkStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pexprk_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * excluding the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t pexprk_last_error_message(char *buf, size_t len);

/**
 * φ_k(z) for 0 ≤ k ≤ 8.
 *
 * # Safety
 * `out` must be null or point to writable memory for one double.
 */
enum PexprkStatus pexprk_phi_scalar(uint32_t k, double z, double *out);

/**
 * Gray–Scott problem on an n×n grid with the given partition code; the
 * jacobian code only matters for `PEXPRK_PARTITION_NONE`.
 *
 * # Safety
 * `out` must be null or valid for writing one pointer.
 */
enum PexprkStatus pexprk_gray_scott_new(size_t n,
                                        int32_t partition,
                                        int32_t jacobian,
                                        struct PexprkProblem **out);

/**
 * Random semilinear test problem u' = Lu + 0.1 sin(u). With `explicit`
 * nonzero the operator is zero.
 *
 * # Safety
 * `out` must be null or valid for writing one pointer.
 */
enum PexprkStatus pexprk_oracle_new(size_t dim,
                                    uint64_t seed,
                                    int32_t explicit_,
                                    struct PexprkProblem **out);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t pexprk_problem_dim(const struct PexprkProblem *p);

/**
 * Number of partitions, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live handle.
 */
size_t pexprk_problem_num_parts(const struct PexprkProblem *p);

/**
 * Copies the initial state into `out` (length `len` must equal the
 * dimension).
 *
 * # Safety
 * `p` must be null or a live handle; `out` null or valid for `len` doubles.
 */
enum PexprkStatus pexprk_problem_initial_state(const struct PexprkProblem *p,
                                               double *out,
                                               size_t len);

/**
 * Writes Σ_p f^p(u) into `out`.
 *
 * # Safety
 * `p` must be null or a live handle; `u` and `out` null or valid for
 * `len` doubles and not overlapping.
 */
enum PexprkStatus pexprk_problem_rhs(const struct PexprkProblem *p,
                                     const double *u,
                                     double *out,
                                     size_t len);

/**
 * Releases a problem handle. Null is ignored.
 *
 * # Safety
 * `p` must be null or a handle not yet freed.
 */
void pexprk_problem_free(struct PexprkProblem *p);

/**
 * Stepper for a catalog method of order 2, 3 or 4 in the given form.
 *
 * # Safety
 * `out` must be null or valid for writing one pointer.
 */
enum PexprkStatus pexprk_stepper_new(uint32_t order, int32_t form, struct PexprkStepper **out);

/**
 * Order-2 two-partition stepper in residual form.
 *
 * # Safety
 * `out` must be null or valid for writing one pointer.
 */
enum PexprkStatus pexprk_stepper_residual2_new(struct PexprkStepper **out);

/**
 * Releases a stepper handle. Null is ignored.
 *
 * # Safety
 * `s` must be null or a handle not yet freed.
 */
void pexprk_stepper_free(struct PexprkStepper *s);

/**
 * Integrates from `u0` over [t0, tf] with `n_steps` equal steps and
 * writes the final state to `out`. `stats` may be null.
 *
 * # Safety
 * Handles must be live; `u0` and `out` valid for `len` doubles; `stats`
 * null or writable.
 */
enum PexprkStatus pexprk_integrate(const struct PexprkStepper *stepper,
                                   const struct PexprkProblem *problem,
                                   const double *u0,
                                   size_t len,
                                   double t0,
                                   double tf,
                                   size_t n_steps,
                                   double krylov_tol,
                                   size_t m_max,
                                   double *out,
                                   struct PexprkStats *stats);

/**
 * Residuals of the stiff order conditions 1, 2a, 2b, 3a, 3b, 4a, 4b, 4c,
 * 4d (in that order) for the catalog method of the given order, on random
 * size×size matrices. `out` receives `PEXPRK_NUM_CONDITIONS` values.
 *
 * # Safety
 * `out` must be null or valid for `PEXPRK_NUM_CONDITIONS` doubles.
 */
enum PexprkStatus pexprk_check_order(uint32_t order, size_t size, uint64_t seed, double *out);

/**
 * Runs a convergence study described by a JSON object with the same keys
 * as the command-line flags and writes CSV to `out_path`.
 *
 * # Safety
 * Both arguments must be null or NUL-terminated strings.
 */
enum PexprkStatus pexprk_run_study(const char *config_json, const char *out_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEXPRK_H */
