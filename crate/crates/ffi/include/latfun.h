#ifndef LATFUN_H
#define LATFUN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LatfunStatus {
  LatfunStatus_Ok = 0,
  LatfunStatus_NullPointer = 1,
  LatfunStatus_InvalidArgument = 2,
  LatfunStatus_DimensionMismatch = 3,
  LatfunStatus_OutOfRange = 4,
  LatfunStatus_Singular = 5,
  LatfunStatus_Unsupported = 6,
  LatfunStatus_Panic = 99,
} LatfunStatus;

typedef enum LatfunRegime {
  LatfunRegime_Interior = 0,
  LatfunRegime_Q2Infinite = 1,
  LatfunRegime_Q1Infinite = 2,
  LatfunRegime_ZeroRate = 3,
} LatfunRegime;

/**
 * Lattice handle.
 */
typedef struct LatfunLattice LatfunLattice;

/**
 * Source model handle.
 */
typedef struct LatfunModel LatfunModel;

/**
 * Optimal Berger-Tung operating point. Infinite noise variances are
 * reported as `INFINITY`.
 */
typedef struct LatfunBtOptimum {
  double q1_star;
  double q2_star;
  double sum_rate;
  enum LatfunRegime regime;
} LatfunBtOptimum;

typedef struct LatfunSimReport {
  uint64_t trials;
  double empirical_distortion;
  double distortion_std_error;
  double overload_rate;
  double conditional_distortion;
  double conditional_std_error;
  double dither_moment_check;
  double dither_moment_std_error;
  double rate1;
  double rate2;
} LatfunSimReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *latfun_last_error_message(void);

/**
 * Creates a lattice from a row-major `dim x dim` generator (rows are basis
 * vectors).
 *
 * # Safety
 * `gen` must point to `dim * dim` readable doubles and `out` to writable
 * storage for one pointer.
 */
enum LatfunStatus latfun_lattice_new(const double *gen, uintptr_t dim, struct LatfunLattice **out);

/**
 * # Safety
 * `lat` must come from [`latfun_lattice_new`] and not be freed already.
 */
void latfun_lattice_free(struct LatfunLattice *lat);

/**
 * Nearest lattice point to `x`, written to `out` (`len` doubles).
 *
 * # Safety
 * `x` and `out` must each hold `len` doubles; `lat` must be a live handle.
 */
enum LatfunStatus latfun_lattice_nearest_point(const struct LatfunLattice *lat,
                                               const double *x,
                                               uintptr_t len,
                                               double *out);

/**
 * `x mod lattice`, written to `out` (`len` doubles).
 *
 * # Safety
 * As for [`latfun_lattice_nearest_point`].
 */
enum LatfunStatus latfun_lattice_mod(const struct LatfunLattice *lat,
                                     const double *x,
                                     uintptr_t len,
                                     double *out);

/**
 * Normalized second moment and its standard error (0 when exact).
 *
 * # Safety
 * `lat` must be a live handle; `nsm` and `std_error` writable.
 */
enum LatfunStatus latfun_lattice_nsm(const struct LatfunLattice *lat,
                                     uintptr_t samples,
                                     uint64_t seed,
                                     double *nsm,
                                     double *std_error);

/**
 * Unit-variance pair with correlation `rho` and `Z = X1 - c X2`.
 *
 * # Safety
 * `out` must be writable.
 */
enum LatfunStatus latfun_model_two_user(double rho, double c, struct LatfunModel **out);

/**
 * # Safety
 * `model` must come from a `latfun_model_*` constructor and not be freed
 * already.
 */
void latfun_model_free(struct LatfunModel *model);

/**
 * Lattice-binning minimum sum rate in bits.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum LatfunStatus latfun_lattice_min_sum(const struct LatfunModel *model, double d, double *out);

/**
 * Berger-Tung minimum sum rate in bits; zero for `d >= sigma_Z^2`.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum LatfunStatus latfun_bt_min_sum(const struct LatfunModel *model, double d, double *out);

/**
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum LatfunStatus latfun_bt_optimal_q(const struct LatfunModel *model,
                                      double d,
                                      struct LatfunBtOptimum *out);

/**
 * Berger-Tung minus lattice-binning minimum sum rate, in bits.
 *
 * # Safety
 * `out` must be writable.
 */
enum LatfunStatus latfun_sum_rate_gap(double rho, double c, double d, double *out);

/**
 * Monte Carlo run of the two-user codec on scaled integer lattices.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum LatfunStatus latfun_simulate_two_user(const struct LatfunModel *model,
                                           double d,
                                           double q1,
                                           uintptr_t n,
                                           double margin,
                                           uint64_t trials,
                                           uint64_t seed,
                                           struct LatfunSimReport *out);

/**
 * Entropy bounds in bits for the difference of two uniforms with variances
 * `q1`, `q2`.
 *
 * # Safety
 * `lower`, `estimate` and `upper` must be writable.
 */
enum LatfunStatus latfun_epi_sandwich(double q1,
                                      double q2,
                                      uintptr_t panels,
                                      double *lower,
                                      double *estimate,
                                      double *upper);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATFUN_H */
