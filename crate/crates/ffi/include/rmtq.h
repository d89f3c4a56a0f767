#ifndef RMTQ_H
#define RMTQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RmtqStatus {
  RMTQ_STATUS_OK = 0,
  RMTQ_STATUS_NULL_POINTER = 1,
  RMTQ_STATUS_INVALID_INPUT = 2,
  /**
   * Solver failure: no convergence, branch loss, singular factor.
   */
  RMTQ_STATUS_NUMERICAL = 3,
  RMTQ_STATUS_BUFFER_TOO_SMALL = 4,
  RMTQ_STATUS_PANIC = 5,
} RmtqStatus;

/**
 * Tabulated Gaudin-Mehta gap density.
 */
typedef struct RmtqGapReference RmtqGapReference;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error of this thread, NUL terminated, into `buf`.
 * Returns the length including the terminator (0 if there is no error);
 * nothing is written when `len` is smaller than that.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t rmtq_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rmtq_version(void);

/**
 * Gaudin-Mehta table for `beta` in {1, 2} on `[0, s_max]` with `points`
 * nodes. Pass `s_max = 0` and `points = 0` for the default table.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum RmtqStatus rmtq_gap_reference_new(uint8_t beta,
                                       double s_max,
                                       size_t points,
                                       struct RmtqGapReference **out);

/**
 * # Safety
 * `handle` must come from [`rmtq_gap_reference_new`] and `out` be writable.
 */
enum RmtqStatus rmtq_gap_reference_density(const struct RmtqGapReference *handle,
                                           double s,
                                           double *out);

/**
 * # Safety
 * `handle` must come from [`rmtq_gap_reference_new`] and `out` be writable.
 */
enum RmtqStatus rmtq_gap_reference_cdf(const struct RmtqGapReference *handle,
                                       double s,
                                       double *out);

/**
 * # Safety
 * `handle` must be null or come from [`rmtq_gap_reference_new`], and must
 * not be used afterwards.
 */
void rmtq_gap_reference_free(struct RmtqGapReference *handle);

/**
 * Solves the scalar MDE for the deformation eigenvalues `d[0..n]` at
 * `z = z_re + i z_im`, `z_im != 0`.
 *
 * # Safety
 * `d` must point to `n` doubles; `m_re`, `m_im` must be writable.
 */
enum RmtqStatus rmtq_mde_solve(const double *d,
                               size_t n,
                               double z_re,
                               double z_im,
                               double *m_re,
                               double *m_im);

/**
 * Self-consistent density and CDF at a real energy.
 *
 * # Safety
 * `d` must point to `n` doubles; `rho`, `cdf` must be writable.
 */
enum RmtqStatus rmtq_mde_density(const double *d,
                                 size_t n,
                                 double energy,
                                 double *rho,
                                 double *cdf);

/**
 * Ascending eigenvalues of a Gaussian Wigner matrix (GOE for `beta = 1`,
 * GUE for `beta = 2`) drawn from `seed`, written to `out[0..n]`.
 *
 * # Safety
 * `out` must point to `out_len` writable doubles.
 */
enum RmtqStatus rmtq_sample_wigner_eigenvalues(size_t n,
                                               uint8_t beta,
                                               uint64_t seed,
                                               double *out,
                                               size_t out_len);

/**
 * KS distance between `samples` and the Gaudin-Mehta CDF for `beta`.
 *
 * # Safety
 * `samples` must point to `len` doubles; `out` must be writable.
 */
enum RmtqStatus rmtq_ks_distance(const double *samples, size_t len, uint8_t beta, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RMTQ_H */
