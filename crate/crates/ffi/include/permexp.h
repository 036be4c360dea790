#ifndef PERMEXP_H
#define PERMEXP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum PermexpSampler {
  PERMEXP_SAMPLER_GIBBS = 0,
  PERMEXP_SAMPLER_HIT_AND_RUN = 1,
  PERMEXP_SAMPLER_UNIFORM = 2,
} PermexpSampler;

/**
 * Result of every call.
 */
typedef enum PermexpStatus {
  PERMEXP_STATUS_OK = 0,
  PERMEXP_STATUS_NULL_POINTER = 1,
  PERMEXP_STATUS_INVALID_ARGUMENT = 2,
  PERMEXP_STATUS_NUMERICAL = 3,
  PERMEXP_STATUS_IO = 4,
  PERMEXP_STATUS_BUFFER_TOO_SMALL = 5,
  PERMEXP_STATUS_PANIC = 6,
} PermexpStatus;

typedef struct PermexpPermutation PermexpPermutation;

/**
 * Statistic `f = (f_1, …, f_L)`.
 */
typedef struct PermexpSpec PermexpSpec;

typedef struct PermexpSolveInfo {
  size_t iterations;
  double gradient_norm;
  bool converged;
} PermexpSolveInfo;

typedef struct PermexpInterval {
  double estimate;
  double lo;
  double hi;
  double half_width;
} PermexpInterval;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length
 * excluding the terminator. `buf` may be null to query the length.
 */
size_t permexp_last_error(char *buf, size_t len);

/**
 * Static NUL-terminated version string.
 */
const char *permexp_version(void);

/**
 * Builds a statistic from comma-separated builtin names, e.g. `"xy,neg_abs_diff"`.
 */
enum PermexpStatus permexp_spec_from_names(const char *names, struct PermexpSpec **out);

/**
 * One-component statistic from an `m x m` table, row-major in `x`,
 * evaluated by bilinear interpolation.
 */
enum PermexpStatus permexp_spec_from_table(size_t m,
                                           const double *values,
                                           struct PermexpSpec **out);

/**
 * New handle holding the doubly-centered version of `spec`.
 */
enum PermexpStatus permexp_spec_centered(const struct PermexpSpec *spec, struct PermexpSpec **out);

/**
 * Number of components `L`, or 0 for a null handle.
 */
size_t permexp_spec_dimension(const struct PermexpSpec *spec);

void permexp_spec_free(struct PermexpSpec *spec);

/**
 * Permutation from 0-based images.
 */
enum PermexpStatus permexp_permutation_new(const size_t *images,
                                           size_t n,
                                           struct PermexpPermutation **out);

size_t permexp_permutation_len(const struct PermexpPermutation *pi);

/**
 * Writes the 0-based images into `out`, which must hold `len(pi)` entries.
 */
enum PermexpStatus permexp_permutation_images(const struct PermexpPermutation *pi,
                                              size_t *out,
                                              size_t out_len);

void permexp_permutation_free(struct PermexpPermutation *pi);

/**
 * `T(π)`, `L` values.
 */
enum PermexpStatus permexp_statistic(const struct PermexpSpec *spec,
                                     const struct PermexpPermutation *pi,
                                     double *out,
                                     size_t out_len);

/**
 * Draws replication `rep` of the stream identified by `seed`. The same
 * `(seed, rep)` always gives the same permutation.
 */
enum PermexpStatus permexp_sample(const struct PermexpSpec *spec,
                                  const double *theta,
                                  size_t theta_len,
                                  size_t n,
                                  enum PermexpSampler method,
                                  size_t sweeps,
                                  uint64_t seed,
                                  uint64_t rep,
                                  struct PermexpPermutation **out);

/**
 * Maximum pseudo-likelihood estimate. `root` receives `L` values; `info`
 * may be null.
 */
enum PermexpStatus permexp_solve_ple(const struct PermexpSpec *spec,
                                     const struct PermexpPermutation *pi,
                                     double *root,
                                     size_t root_len,
                                     struct PermexpSolveInfo *info);

/**
 * Level `1 − alpha` sandwich interval for `dᵀθ`.
 */
enum PermexpStatus permexp_confidence_interval(const struct PermexpSpec *spec,
                                               const struct PermexpPermutation *pi,
                                               const double *d,
                                               size_t d_len,
                                               double alpha,
                                               struct PermexpInterval *out);

/**
 * `log Σ_π exp(θᵀT(π))` by enumeration; small `n` only.
 */
enum PermexpStatus permexp_exact_log_partition(const struct PermexpSpec *spec,
                                               const double *theta,
                                               size_t theta_len,
                                               size_t n,
                                               double *out);

/**
 * Continuum limit on a `resolution x resolution` grid: the limiting
 * log-partition `Z`, its gradient `z` (`L` values) and, when `sandwich` is
 * non-null, the asymptotic PLE covariance (`L*L` values, row-major).
 */
enum PermexpStatus permexp_limiting(const struct PermexpSpec *spec,
                                    const double *theta,
                                    size_t theta_len,
                                    size_t resolution,
                                    double *log_partition,
                                    double *z,
                                    size_t z_len,
                                    double *sandwich,
                                    size_t sandwich_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PERMEXP_H */
