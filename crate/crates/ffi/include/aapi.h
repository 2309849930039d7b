#ifndef AAPI_H
#define AAPI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AapiSolver {
  /**
   * Adversary-aware policy iteration.
   */
  AAPI_SOLVER_OAPI = 0,
  /**
   * Vanilla policy iteration.
   */
  AAPI_SOLVER_PI = 1,
} AapiSolver;

typedef enum AapiStatus {
  AAPI_STATUS_OK = 0,
  AAPI_STATUS_NULL_POINTER = 1,
  /**
   * Bad string, index out of range or output buffer too small.
   */
  AAPI_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed model, configuration or checkpoint.
   */
  AAPI_STATUS_CONFIG = 3,
  /**
   * A numeric failure such as divergence or a degenerate baseline.
   */
  AAPI_STATUS_NUMERIC = 4,
  AAPI_STATUS_NON_CONVERGENCE = 5,
  AAPI_STATUS_IO = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  AAPI_STATUS_PANIC = 7,
} AapiStatus;

/**
 * A finite action-adversarial MDP.
 */
typedef struct AapiMdp AapiMdp;

/**
 * A policy restored from a checkpoint file.
 */
typedef struct AapiPolicy AapiPolicy;

/**
 * A solved tabular policy with its action-value table.
 */
typedef struct AapiSolution AapiSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *aapi_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *aapi_last_error(void);

/**
 * Parse an MDP document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a writable pointer.
 */
enum AapiStatus aapi_mdp_from_json(const char *json, struct AapiMdp **out);

/**
 * The hazard gridworld of side `n`.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum AapiStatus aapi_mdp_hazard_gridworld(size_t n,
                                          double hazard_penalty,
                                          double epsilon,
                                          struct AapiMdp **out);

/**
 * Copy of `mdp` with a different perturbation budget.
 *
 * # Safety
 * `mdp` must be a live handle and `out` a writable pointer.
 */
enum AapiStatus aapi_mdp_with_epsilon(const struct AapiMdp *mdp,
                                      double epsilon,
                                      struct AapiMdp **out);

/**
 * # Safety
 * `mdp` must be a live handle and `out` a writable pointer.
 */
enum AapiStatus aapi_mdp_n_states(const struct AapiMdp *mdp, size_t *out);

/**
 * # Safety
 * `mdp` must be a live handle and `out` a writable pointer.
 */
enum AapiStatus aapi_mdp_n_actions(const struct AapiMdp *mdp, size_t *out);

/**
 * # Safety
 * `mdp` must be NULL or a handle not yet freed.
 */
void aapi_mdp_free(struct AapiMdp *mdp);

/**
 * Solve `mdp` exactly. With `AAPI_SOLVER_OAPI` the objective is the value
 * under the optimal adversary, with `AAPI_SOLVER_PI` the nominal value.
 *
 * # Safety
 * `mdp` must be a live handle and `out` a writable pointer.
 */
enum AapiStatus aapi_solve(const struct AapiMdp *mdp,
                           enum AapiSolver solver,
                           double tol,
                           size_t max_iters,
                           struct AapiSolution **out);

/**
 * Action chosen in state `s`.
 *
 * # Safety
 * `solution` must be a live handle and `out` a writable pointer.
 */
enum AapiStatus aapi_solution_action(const struct AapiSolution *solution, size_t s, size_t *out);

/**
 * Entry `(s, a)` of the solution's Q table (`Q_adv` for OA-PI).
 *
 * # Safety
 * `solution` must be a live handle and `out` a writable pointer.
 */
enum AapiStatus aapi_solution_q(const struct AapiSolution *solution,
                                size_t s,
                                size_t a,
                                double *out);

/**
 * Start-distribution value of the final policy.
 *
 * # Safety
 * `solution` must be a live handle and `out` a writable pointer.
 */
enum AapiStatus aapi_solution_objective(const struct AapiSolution *solution, double *out);

/**
 * Number of evaluated policies.
 *
 * # Safety
 * `solution` must be a live handle and `out` a writable pointer.
 */
enum AapiStatus aapi_solution_iterations(const struct AapiSolution *solution, size_t *out);

/**
 * # Safety
 * `solution` must be NULL or a handle not yet freed.
 */
void aapi_solution_free(struct AapiSolution *solution);

/**
 * Load the policy stored in a checkpoint file written by `aapi train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum AapiStatus aapi_policy_load(const char *path, struct AapiPolicy **out);

/**
 * Action for observation `obs`. `seed` drives sampling of stochastic
 * tabular policies. The action length is stored in `written`; a buffer
 * shorter than the action is an error and leaves `action` untouched.
 *
 * # Safety
 * `obs` must point to `obs_len` readable doubles, `action` to `action_len`
 * writable doubles, and `written` must be writable.
 */
enum AapiStatus aapi_policy_act(const struct AapiPolicy *policy,
                                const double *obs,
                                size_t obs_len,
                                uint64_t seed,
                                double *action,
                                size_t action_len,
                                size_t *written);

/**
 * # Safety
 * `policy` must be NULL or a handle not yet freed.
 */
void aapi_policy_free(struct AapiPolicy *policy);

/**
 * Normalized score `(z - z0) / (z1 - z0)`; `z0 == z1` is a numeric error.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum AapiStatus aapi_n_score(double z, double z0, double z1, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AAPI_H */
