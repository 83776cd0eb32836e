#ifndef RABIES_H
#define RABIES_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum RabiesStatus {
  RABIES_STATUS_OK = 0,
  RABIES_STATUS_NULL_POINTER = 1,
  RABIES_STATUS_INVALID_ARGUMENT = 2,
  RABIES_STATUS_NUMERIC = 3,
  RABIES_STATUS_IO = 4,
  RABIES_STATUS_PANIC = 5,
} RabiesStatus;

/**
 * Model parameter set.
 */
typedef struct RabiesParams RabiesParams;

/**
 * Output of an optimal-control sweep.
 */
typedef struct RabiesSweep RabiesSweep;

/**
 * Forward trajectory on a uniform grid.
 */
typedef struct RabiesTrajectory RabiesTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rabies_last_error(void);

/**
 * Number of state compartments (12).
 */
size_t rabies_state_len(void);

/**
 * Name of state compartment `i`, or NULL when out of range. Static string.
 */
const char *rabies_state_name(size_t i);

/**
 * New parameter set: preset 0 is the estimated set, 1 the baseline set.
 * Returns NULL for an unknown preset.
 */
struct RabiesParams *rabies_params_new(uint32_t preset);

/**
 * Parameter set from a JSON object; missing keys take estimated values.
 * Returns NULL on error.
 *
 * # Safety
 * `json` must be a NUL-terminated string.
 */
struct RabiesParams *rabies_params_from_json(const char *json);

/**
 * # Safety
 * `p` must come from a `rabies_params_*` constructor or be NULL.
 */
void rabies_params_free(struct RabiesParams *p);

/**
 * # Safety
 * `p` must be a live handle and `name` a NUL-terminated string.
 */
enum RabiesStatus rabies_params_set(struct RabiesParams *p, const char *name, double value);

/**
 * # Safety
 * `p` must be a live handle, `name` a NUL-terminated string, `out` writable.
 */
enum RabiesStatus rabies_params_get(const struct RabiesParams *p, const char *name, double *out);

/**
 * Checks positivity and the recruitment/death ordering.
 *
 * # Safety
 * `p` must be a live handle.
 */
enum RabiesStatus rabies_params_validate(const struct RabiesParams *p);

/**
 * Closed-form effective reproduction number. `u` points to four control
 * values or is NULL for no control.
 *
 * # Safety
 * `p` must be a live handle, `u` NULL or 4 readable doubles, `out` writable.
 */
enum RabiesStatus rabies_effective_r(const struct RabiesParams *p, const double *u, double *out);

/**
 * Spectral radius of the next-generation matrix.
 *
 * # Safety
 * As for [`rabies_effective_r`].
 */
enum RabiesStatus rabies_spectral_r(const struct RabiesParams *p, const double *u, double *out);

/**
 * Disease-free equilibrium into `out[12]`.
 *
 * # Safety
 * `p` must be a live handle and `out` 12 writable doubles.
 */
enum RabiesStatus rabies_dfe(const struct RabiesParams *p, double *out);

/**
 * Default seeded initial state into `out[12]`.
 *
 * # Safety
 * `p` must be a live handle and `out` 12 writable doubles.
 */
enum RabiesStatus rabies_seeded_state(const struct RabiesParams *p, double *out);

/**
 * Endemic equilibrium into `out[12]`; fails with `Numeric` when `Re < 1`.
 *
 * # Safety
 * `p` must be a live handle, `u` NULL or 4 readable doubles, `out` 12
 * writable doubles.
 */
enum RabiesStatus rabies_endemic_eq(const struct RabiesParams *p, const double *u, double *out);

/**
 * RK4 run from `y0[12]` over `[t0, tf]` in `n_steps` steps with constant
 * controls `u` (NULL for none). On success `*out` owns a new trajectory.
 *
 * # Safety
 * Pointers must be valid as described; `out` must be writable.
 */
enum RabiesStatus rabies_simulate(const struct RabiesParams *p,
                                  const double *y0,
                                  const double *u,
                                  double t0,
                                  double tf,
                                  size_t n_steps,
                                  struct RabiesTrajectory **out);

/**
 * Number of stored nodes (`n_steps + 1`), or 0 for NULL.
 *
 * # Safety
 * `tr` must be a live handle or NULL.
 */
size_t rabies_trajectory_len(const struct RabiesTrajectory *tr);

/**
 * Time and state at node `i`.
 *
 * # Safety
 * `tr` must be a live handle; `t` NULL or writable; `state` 12 writable
 * doubles.
 */
enum RabiesStatus rabies_trajectory_node(const struct RabiesTrajectory *tr,
                                         size_t i,
                                         double *t,
                                         double *state);

/**
 * # Safety
 * `tr` must come from [`rabies_simulate`] or be NULL.
 */
void rabies_trajectory_free(struct RabiesTrajectory *tr);

/**
 * Optimal control by forward-backward sweep.
 *
 * `mask_bits` enables `u1..u4` through bits 0..3. `weights` is NULL for
 * defaults or ten doubles `K1..K6, A1..A4`. Relaxation, tolerance and
 * iteration cap take their defaults.
 *
 * # Safety
 * Pointers must be valid as described; `out` must be writable.
 */
enum RabiesStatus rabies_optimize(const struct RabiesParams *p,
                                  const double *y0,
                                  double t0,
                                  double tf,
                                  size_t n_steps,
                                  uint8_t mask_bits,
                                  const double *weights,
                                  struct RabiesSweep **out);

/**
 * Objective, iteration count and convergence flag of a sweep.
 *
 * # Safety
 * `s` must be a live handle; outputs NULL or writable.
 */
enum RabiesStatus rabies_sweep_summary(const struct RabiesSweep *s,
                                       double *objective,
                                       size_t *iterations,
                                       bool *converged);

/**
 * Number of grid nodes in a sweep, or 0 for NULL.
 *
 * # Safety
 * `s` must be a live handle or NULL.
 */
size_t rabies_sweep_len(const struct RabiesSweep *s);

/**
 * Time, state and controls at node `i`. Any output may be NULL.
 *
 * # Safety
 * `s` must be a live handle; `state` NULL or 12 writable doubles;
 * `controls` NULL or 4 writable doubles.
 */
enum RabiesStatus rabies_sweep_node(const struct RabiesSweep *s,
                                    size_t i,
                                    double *t,
                                    double *state,
                                    double *controls);

/**
 * # Safety
 * `s` must come from [`rabies_optimize`] or be NULL.
 */
void rabies_sweep_free(struct RabiesSweep *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RABIES_H */
