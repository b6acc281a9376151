#ifndef EDSPEC_H
#define EDSPEC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EdspecStatus {
  EDSPEC_STATUS_OK = 0,
  EDSPEC_STATUS_NULL_POINTER = 1,
  EDSPEC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Unknown builtin, bad parameter, malformed JSON or expression.
   */
  EDSPEC_STATUS_INPUT = 3,
  /**
   * Integration or estimation failed.
   */
  EDSPEC_STATUS_NUMERICAL = 4,
  EDSPEC_STATUS_PANIC = 5,
} EdspecStatus;

typedef enum EdspecSystemKind {
  EDSPEC_SYSTEM_KIND_LINEAR = 0,
  EDSPEC_SYSTEM_KIND_NONLINEAR = 1,
  /**
   * Closed-form fundamental matrix.
   */
  EDSPEC_SYSTEM_KIND_FUNDAMENTAL = 2,
} EdspecSystemKind;

typedef enum EdspecVerdict {
  EDSPEC_VERDICT_CERTIFIED = 0,
  EDSPEC_VERDICT_REFUTED = 1,
  EDSPEC_VERDICT_INCONCLUSIVE = 2,
} EdspecVerdict;

/**
 * Opaque spectrum estimate handle.
 */
typedef struct EdspecSpectrum EdspecSpectrum;

/**
 * Opaque system handle.
 */
typedef struct EdspecSystem EdspecSystem;

/**
 * Numerical settings shared by the spectrum and dichotomy calls.
 */
typedef struct EdspecOptions {
  double horizon;
  /**
   * Steklov window.
   */
  double window;
  /**
   * Spacing of the gamma grid.
   */
  double resolution;
  double step;
  double rtol;
  double atol;
} EdspecOptions;

/**
 * Outcome of a dichotomy test at one shift.
 */
typedef struct EdspecDichotomy {
  enum EdspecVerdict verdict;
  /**
   * Rank of the projector (dimension of the stable subspace).
   */
  size_t rank;
  double k;
  double alpha;
} EdspecDichotomy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *edspec_version(void);

/**
 * Default numerical settings.
 */
struct EdspecOptions edspec_options_default(void);

/**
 * Length in bytes (without the terminating NUL) of the last error message
 * on this thread, or 0 when the last call succeeded.
 */
size_t edspec_last_error_length(void);

/**
 * Copies the last error message into `buf` (NUL-terminated, truncated to
 * `len - 1` bytes). Returns the full message length, or -1 if `buf` is null
 * while `len > 0`.
 *
 * # Safety
 * `buf` must be writable for `len` bytes.
 */
ptrdiff_t edspec_last_error_message(char *buf, size_t len);

/**
 * Builds a registry system. `names` and `values` hold `count` parameter
 * assignments; both may be null when `count` is 0.
 *
 * # Safety
 * `name` must be a NUL-terminated string, `names`/`values` must point to
 * `count` entries, and `out` must be writable.
 */
enum EdspecStatus edspec_system_builtin(const char *name,
                                        const char *const *names,
                                        const double *values,
                                        size_t count,
                                        struct EdspecSystem **out);

/**
 * Parses a system from its JSON description.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum EdspecStatus edspec_system_from_json(const char *json, struct EdspecSystem **out);

/**
 * Releases a system. Null is ignored.
 *
 * # Safety
 * `sys` must come from this library and not have been freed.
 */
void edspec_system_free(struct EdspecSystem *sys);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `sys` must be null or a live handle.
 */
size_t edspec_system_dim(const struct EdspecSystem *sys);

/**
 * # Safety
 * `sys` must be a live handle and `out` writable.
 */
enum EdspecStatus edspec_system_kind(const struct EdspecSystem *sys, enum EdspecSystemKind *out);

/**
 * Evaluates the vector field at `(t, x)`; `x` and `out` hold `n` entries.
 * Linear systems evaluate `A(t) x`.
 *
 * # Safety
 * `x` must be readable and `out` writable for `n` doubles.
 */
enum EdspecStatus edspec_system_eval(const struct EdspecSystem *sys,
                                     double t,
                                     const double *x,
                                     size_t n,
                                     double *out);

/**
 * Estimates the dichotomy spectrum. `opts` may be null for defaults.
 *
 * # Safety
 * `sys` must be a live handle, `opts` null or valid, `out` writable.
 */
enum EdspecStatus edspec_spectrum(const struct EdspecSystem *sys,
                                  const struct EdspecOptions *opts,
                                  struct EdspecSpectrum **out);

/**
 * Number of spectral intervals, or 0 for a null handle.
 *
 * # Safety
 * `spec` must be null or a live handle.
 */
size_t edspec_spectrum_count(const struct EdspecSpectrum *spec);

/**
 * Endpoints of interval `index`, in ascending order of intervals.
 *
 * # Safety
 * `spec` must be a live handle; `lo` and `hi` writable.
 */
enum EdspecStatus edspec_spectrum_interval(const struct EdspecSpectrum *spec,
                                           size_t index,
                                           double *lo,
                                           double *hi);

/**
 * Releases a spectrum. Null is ignored.
 *
 * # Safety
 * `spec` must come from this library and not have been freed.
 */
void edspec_spectrum_free(struct EdspecSpectrum *spec);

/**
 * Tests for an exponential dichotomy of `x' = (A(t) - gamma I) x`.
 *
 * # Safety
 * `sys` must be a live handle, `opts` null or valid, `out` writable.
 */
enum EdspecStatus edspec_dichotomy(const struct EdspecSystem *sys,
                                   double gamma,
                                   const struct EdspecOptions *opts,
                                   struct EdspecDichotomy *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDSPEC_H */
