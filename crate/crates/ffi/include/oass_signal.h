#ifndef OASS_SIGNAL_H
#define OASS_SIGNAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OassStatus {
  OASS_STATUS_OK = 0,
  OASS_STATUS_NULL_POINTER = 1,
  OASS_STATUS_DIMENSION_MISMATCH = 2,
  OASS_STATUS_NOT_SYMMETRIC = 3,
  OASS_STATUS_NOT_POSITIVE_DEFINITE = 4,
  OASS_STATUS_RANK_DEFICIENT = 5,
  OASS_STATUS_INFEASIBLE = 6,
  OASS_STATUS_ITERATION_LIMIT = 7,
  OASS_STATUS_NOT_OPTIMAL_START = 8,
  OASS_STATUS_INVALID_NETWORK = 9,
  OASS_STATUS_INVALID_CONFIG = 10,
  OASS_STATUS_BUFFER_TOO_SMALL = 11,
  OASS_STATUS_INVALID_UTF8 = 12,
  OASS_STATUS_PANIC = 13,
  OASS_STATUS_OTHER = 14,
} OassStatus;

// Rolling-horizon signal controller for one network.
typedef struct OassController OassController;

// Parametric QP `min U'HU/2 + (F x0 + g_c)'U` subject to `G U >= W + E x0`.
typedef struct OassQp OassQp;

// Primal and dual solution with its active set.
typedef struct OassSolution OassSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *oass_last_error(void);

// Builds a QP from row-major `h` (n x n), `f` (n x p), `g_c` (n),
// `g` (m x n), `w` (m) and `e` (m x p).
//
// # Safety
// Every array must hold the stated number of values and `out` must be
// writable.
enum OassStatus oass_qp_new(size_t n_vars,
                            size_t n_cons,
                            size_t n_state,
                            const double *h,
                            const double *f,
                            const double *g_c,
                            const double *g,
                            const double *w,
                            const double *e,
                            struct OassQp **out);

// # Safety
// `qp` must come from [`oass_qp_new`] and not be used afterwards.
void oass_qp_free(struct OassQp *qp);

// # Safety
// `qp` must be a live handle; the outputs must be writable or null.
enum OassStatus oass_qp_dims(const struct OassQp *qp,
                             size_t *n_vars,
                             size_t *n_cons,
                             size_t *n_state);

// Solves `QP(x0)` from scratch. `changes` receives the number of
// working-set changes and may be null.
//
// # Safety
// `x0` must hold `n_state` values; `out` must be writable.
enum OassStatus oass_qp_cold_start(const struct OassQp *qp,
                                   const double *x0,
                                   struct OassSolution **out,
                                   size_t *changes);

// Solves `QP(x0)` by homotopy from `prev`, an optimal solution of the same
// QP at another parameter.
//
// # Safety
// As [`oass_qp_cold_start`]; `prev` must be a live solution handle.
enum OassStatus oass_qp_hot_solve(const struct OassQp *qp,
                                  const struct OassSolution *prev,
                                  const double *x0,
                                  struct OassSolution **out,
                                  size_t *changes);

// # Safety
// `sol` must come from a solve and not be used afterwards.
void oass_solution_free(struct OassSolution *sol);

// Copies the primal solution into `out` (`len >= n_vars`).
//
// # Safety
// `out` must be writable for `len` values.
enum OassStatus oass_solution_primal(const struct OassSolution *sol, double *out, size_t len);

// Copies one multiplier per constraint into `out` (`len >= n_cons`).
//
// # Safety
// `out` must be writable for `len` values.
enum OassStatus oass_solution_dual(const struct OassSolution *sol, double *out, size_t len);

// Writes the number of active constraints to `count` and, when `out` is
// not null, their sorted indices.
//
// # Safety
// `count` must be writable; `out` null or writable for `len` values.
enum OassStatus oass_solution_active(const struct OassSolution *sol,
                                     size_t *out,
                                     size_t len,
                                     size_t *count);

// Objective value of `sol` for `qp` at the solution's parameter.
//
// # Safety
// Both handles must be live; `out` must be writable.
enum OassStatus oass_solution_objective(const struct OassQp *qp,
                                        const struct OassSolution *sol,
                                        double *out);

// Controller for a network given as TOML text, with default bounds and
// weights. `source_inflow` is the expected source demand in veh/h used by
// the predictor.
//
// # Safety
// `network_toml` must be a NUL-terminated string; `out` must be writable.
enum OassStatus oass_controller_new(const char *network_toml,
                                    size_t horizon,
                                    size_t n_itr,
                                    double source_inflow,
                                    struct OassController **out);

// # Safety
// `ctrl` must come from [`oass_controller_new`] and not be used afterwards.
void oass_controller_free(struct OassController *ctrl);

// # Safety
// `ctrl` must be live; the outputs must be writable or null.
enum OassStatus oass_controller_dims(const struct OassController *ctrl,
                                     size_t *n_links,
                                     size_t *n_inputs);

// One solve per cycle for queues `x`. With `warm` nonzero the solve starts
// from the previous cycle's solution. Writes the green times to `plan`,
// and the change count and fallback flag when those pointers are not null.
//
// # Safety
// `x` must hold `n_links` values and `plan` must be writable for `len`.
enum OassStatus oass_controller_cycle(struct OassController *ctrl,
                                      const double *x,
                                      int32_t warm,
                                      double *plan,
                                      size_t len,
                                      size_t *changes,
                                      int32_t *fallback);

// Work for sample interval `i` (1-based) of `n_itr` with queues `x`. After
// the last interval `done` is set to 1 and `plan` receives the green times;
// before it `done` is 0 and `plan` is untouched.
//
// # Safety
// As [`oass_controller_cycle`]; `done` must be writable.
enum OassStatus oass_controller_interval(struct OassController *ctrl,
                                         const double *x,
                                         size_t i,
                                         double *plan,
                                         size_t len,
                                         int32_t *done);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OASS_SIGNAL_H */
