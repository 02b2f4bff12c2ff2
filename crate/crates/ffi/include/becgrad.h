#ifndef BECGRAD_H
#define BECGRAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes. Zero is success.
 */
typedef enum BecgradStatus {
  BECGRAD_STATUS_OK = 0,
  BECGRAD_STATUS_NULL_POINTER = 1,
  BECGRAD_STATUS_INVALID_ARGUMENT = 2,
  BECGRAD_STATUS_INVALID_PARAMS = 3,
  BECGRAD_STATUS_INVALID_GRID = 4,
  BECGRAD_STATUS_INVALID_STATE = 5,
  BECGRAD_STATUS_NO_ZERO_CROSSING = 6,
  BECGRAD_STATUS_INTEGRATION_FAILED = 7,
  BECGRAD_STATUS_CONFIG = 8,
  BECGRAD_STATUS_IO = 9,
  BECGRAD_STATUS_OUT_OF_RANGE = 10,
  BECGRAD_STATUS_INTERNAL = 11,
  BECGRAD_STATUS_PANIC = 99,
} BecgradStatus;

/**
 * Which state enters the detection stage.
 */
typedef enum BecgradInitialState {
  BECGRAD_INITIAL_STATE_SINGLET = 0,
  BECGRAD_INITIAL_STATE_SYNTHESIZED = 1,
  BECGRAD_INITIAL_STATE_PRODUCT = 2,
} BecgradInitialState;

/**
 * Opaque estimator time series.
 */
typedef struct BecgradSeries BecgradSeries;

/**
 * Opaque result of the preparation pipeline.
 */
typedef struct BecgradSynthesis BecgradSynthesis;

/**
 * Detection parameters, frequencies in units of the mean coupling.
 */
typedef struct BecgradDetectionParams {
  size_t n;
  double omega;
  double omega_d;
  double chi;
  double gamma_o;
  double gamma_t_ee;
  double gamma_t_eg;
} BecgradDetectionParams;

/**
 * Summary of the entangled-state preparation.
 */
typedef struct BecgradSynthesisReport {
  double t_star;
  double t_phase;
  double fidelity_max;
  double well_weight;
} BecgradSynthesisReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *becgrad_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * in bytes, excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to at least `len` writable bytes.
 */
size_t becgrad_last_error(char *buf, size_t len);

/**
 * Defaults: N = 4, Omega = 1, Omega_D = 0.05, no losses, chi = 0.
 */
struct BecgradDetectionParams becgrad_detection_params_default(void);

/**
 * `N(N+4)/12 cos(phi_D)`.
 */
double becgrad_analytic_variance(size_t n, double phi_d);

/**
 * Published closed-form uncertainty curve.
 */
double becgrad_analytic_uncertainty(size_t n, double phi_d);

/**
 * `sqrt(3 / (N(N+4)))`.
 */
double becgrad_heisenberg_uncertainty(size_t n);

/**
 * `sqrt(12 / (N(N+4)))`, the quantum Cramer-Rao bound of the singlet.
 */
double becgrad_cramer_rao_bound(size_t n);

/**
 * `1 / sqrt(N)`.
 */
double becgrad_sql_baseline(size_t n);

/**
 * Field in tesla for coupling `omega` in units of a reference frequency
 * given in Hz.
 */
double becgrad_field_from_coupling(double omega, double omega_ref_hz);

/**
 * Runs the detection stage on `[0, t_end]` with `samples` points and
 * stores the estimator series in `*out`.
 *
 * # Safety
 * `params` must point to a valid struct and `out` to writable storage for
 * one pointer.
 */
enum BecgradStatus becgrad_detection_run(const struct BecgradDetectionParams *params,
                                         enum BecgradInitialState initial,
                                         double u_over_ej,
                                         double t_end,
                                         size_t samples,
                                         struct BecgradSeries **out);

/**
 * Number of samples in `series` (0 for null).
 *
 * # Safety
 * `series` must be null or a live handle.
 */
size_t becgrad_series_len(const struct BecgradSeries *series);

/**
 * Sample `k`: time, `<O>`, `<O^2>` and the phase uncertainty (`INFINITY`
 * at stationary points). Any output pointer may be null.
 *
 * # Safety
 * `series` must be a live handle; non-null outputs must be writable.
 */
enum BecgradStatus becgrad_series_get(const struct BecgradSeries *series,
                                      size_t k,
                                      double *t,
                                      double *estimator,
                                      double *estimator_sq,
                                      double *uncertainty);

/**
 * Releases a series handle. Null is ignored.
 *
 * # Safety
 * `series` must be null or a handle not yet freed.
 */
void becgrad_series_free(struct BecgradSeries *series);

/**
 * Phase uncertainty at `t = pi / (2 Omega_D)` (`INFINITY` if unbounded).
 *
 * # Safety
 * `params` must point to a valid struct and `out` to a writable double.
 */
enum BecgradStatus becgrad_uncertainty_at_quarter_period(const struct BecgradDetectionParams *params,
                                                         enum BecgradInitialState initial,
                                                         double u_over_ej,
                                                         double *out);

/**
 * Pair tunnelling, `t*` detection and phase correction for `n` atoms.
 *
 * # Safety
 * `out` must point to writable storage for one pointer.
 */
enum BecgradStatus becgrad_synthesize(size_t n, double u_over_ej, struct BecgradSynthesis **out);

/**
 * # Safety
 * `synthesis` must be a live handle and `report` writable.
 */
enum BecgradStatus becgrad_synthesis_report(const struct BecgradSynthesis *synthesis,
                                            struct BecgradSynthesisReport *report);

/**
 * Dimension of the detection-ready state (`(N/2+1)^2`), 0 for null.
 *
 * # Safety
 * `synthesis` must be null or a live handle.
 */
size_t becgrad_synthesis_dim(const struct BecgradSynthesis *synthesis);

/**
 * Copies the detection-ready amplitudes as interleaved `re, im` pairs and
 * the occupations `e_L, g_L, e_R, g_R` of each basis state. `amplitudes`
 * needs `2 * dim` doubles and `occupations` (may be null) `4 * dim`
 * integers.
 *
 * # Safety
 * Buffers must be writable for the stated lengths.
 */
enum BecgradStatus becgrad_synthesis_state(const struct BecgradSynthesis *synthesis,
                                           double *amplitudes,
                                           uint32_t *occupations,
                                           size_t dim);

/**
 * # Safety
 * `synthesis` must be null or a handle not yet freed.
 */
void becgrad_synthesis_free(struct BecgradSynthesis *synthesis);

/**
 * Runs a named recipe with its preset, optionally overlaid by a TOML or
 * JSON file (`config_path` may be null), writing into `out_dir`.
 *
 * # Safety
 * String arguments must be NUL-terminated or null where allowed.
 */
enum BecgradStatus becgrad_run_recipe(const char *recipe,
                                      const char *config_path,
                                      const char *out_dir,
                                      int verify);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BECGRAD_H */
