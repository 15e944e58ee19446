#ifndef HAWKES_STEIN_H
#define HAWKES_STEIN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HsStatus {
  HS_STATUS_OK = 0,
  HS_STATUS_NULL_POINTER = 1,
  HS_STATUS_INVALID_ARGUMENT = 2,
  HS_STATUS_CONFIG = 3,
  HS_STATUS_MODEL_VIOLATION = 4,
  HS_STATUS_INADMISSIBLE = 5,
  HS_STATUS_NUMERICAL = 6,
  HS_STATUS_BUFFER_TOO_SMALL = 7,
  HS_STATUS_PANIC = 8,
} HsStatus;

/**
 * Which normalized functional to evaluate on a path.
 */
typedef enum HsFunctional {
  /**
   * (H_T − ∫λ)/√T
   */
  HS_FUNCTIONAL_STANDARD = 0,
  /**
   * Σ(Tλ(t_i))^{-1/2} − T^{-1/2}∫√λ
   */
  HS_FUNCTIONAL_REDUCED = 1,
} HsFunctional;

typedef struct HsModel HsModel;

typedef struct HsPath HsPath;

typedef struct HsResolvent HsResolvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call into this library from the same thread.
 */
const char *hs_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hs_version(void);

/**
 * Parses a model table from TOML text. The model is not validated.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum HsStatus hs_model_from_toml(const char *toml, struct HsModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle from `hs_model_from_toml` not yet freed.
 */
void hs_model_free(struct HsModel *model);

/**
 * Checks every admissibility condition; the message lists all violations.
 *
 * # Safety
 * `model` must be a live handle.
 */
enum HsStatus hs_model_validate(const struct HsModel *model);

/**
 * Simulates the model on [0, horizon) from the Poisson configuration of `seed`.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum HsStatus hs_simulate(const struct HsModel *model,
                          uint64_t seed,
                          double horizon,
                          struct HsPath **out);

/**
 * # Safety
 * `path` must be NULL or a handle from `hs_simulate` not yet freed.
 */
void hs_path_free(struct HsPath *path);

/**
 * Number of events in [0, horizon); 0 for a NULL handle.
 *
 * # Safety
 * `path` must be NULL or a live handle.
 */
size_t hs_path_len(const struct HsPath *path);

/**
 * Copies event times and marks in [0, horizon) into caller buffers of
 * length `cap`. `written` receives the event count; if it exceeds `cap`
 * nothing is copied and BufferTooSmall is returned. `theta` may be NULL.
 *
 * # Safety
 * `t` (and `theta` when non-NULL) must point to `cap` writable doubles.
 */
enum HsStatus hs_path_events(const struct HsPath *path,
                             double *t,
                             double *theta,
                             size_t cap,
                             size_t *written);

/**
 * Intensity λ(t) of the path (left limit at event times).
 *
 * # Safety
 * `path` must be a live handle; `out` must be writable.
 */
enum HsStatus hs_path_intensity(const struct HsPath *path, double t, double *out);

/**
 * ∫₀ᵀ λ(s) ds.
 *
 * # Safety
 * `path` must be a live handle; `out` must be writable.
 */
enum HsStatus hs_path_compensator(const struct HsPath *path, double *out);

/**
 * # Safety
 * `path` must be a live handle; `out` must be writable.
 */
enum HsStatus hs_path_functional(const struct HsPath *path, enum HsFunctional kind, double *out);

/**
 * Resolvent Σ_{k≥1} αᵏ|φ|^{∗k} of the model kernel on [0, horizon] with step `dt`.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum HsStatus hs_resolvent(const struct HsModel *model,
                           double alpha,
                           double horizon,
                           double dt,
                           struct HsResolvent **out);

/**
 * # Safety
 * `r` must be NULL or a handle from `hs_resolvent` not yet freed.
 */
void hs_resolvent_free(struct HsResolvent *r);

/**
 * Number of grid points (values at t = k·dt, k = 0..len).
 *
 * # Safety
 * `r` must be NULL or a live handle.
 */
size_t hs_resolvent_len(const struct HsResolvent *r);

/**
 * Copies the grid values; same buffer protocol as `hs_path_events`.
 *
 * # Safety
 * `values` must point to `cap` writable doubles.
 */
enum HsStatus hs_resolvent_values(const struct HsResolvent *r,
                                  double *values,
                                  size_t cap,
                                  size_t *written);

/**
 * Bound on the resolvent mass beyond the grid horizon.
 *
 * # Safety
 * `r` must be a live handle; `out` must be writable.
 */
enum HsStatus hs_resolvent_tail_bound(const struct HsResolvent *r, double *out);

/**
 * Exact W₁ between the empirical law of `sample` and N(0, sigma2).
 *
 * # Safety
 * `sample` must point to `n` readable doubles; `out` must be writable.
 */
enum HsStatus hs_w1_to_gaussian(const double *sample, size_t n, double sigma2, double *out);

/**
 * Weighted log–log fit of `estimate ≈ C·horizon^slope`.
 *
 * # Safety
 * The three input arrays must hold `n` readable doubles; outputs must be writable.
 */
enum HsStatus hs_fit_rate(const double *horizons,
                          const double *estimates,
                          const double *se,
                          size_t n,
                          double *slope,
                          double *slope_se,
                          double *intercept);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAWKES_STEIN_H */
