#ifndef FBM_CURRENTS_H
#define FBM_CURRENTS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Finite-difference scheme of the mollified derivative.
typedef enum FcScheme {
  // `(X_{t+eps} - X_{t-eps}) / (2 eps)`
  FC_SCHEME_SYMMETRIC = 0,
  // `(X_{t+eps} - X_t) / eps`
  FC_SCHEME_FORWARD = 1,
} FcScheme;

// Status codes returned by every fallible function.
typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_PARAMETER = 2,
  FC_STATUS_MISALIGNED_EPSILON = 3,
  FC_STATUS_SINGULAR_AT_ORIGIN = 4,
  FC_STATUS_DIVERGENT = 5,
  FC_STATUS_OUT_OF_RANGE = 6,
  FC_STATUS_BUFFER_TOO_SMALL = 7,
  FC_STATUS_NUMERICAL = 8,
  FC_STATUS_PANIC = 9,
} FcStatus;

// Tabulated Bessel-potential kernel `K_alpha` in dimension `d`.
typedef struct FcKernel FcKernel;

// A sampled fBm path on a uniform grid.
typedef struct FcPath FcPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fc_version(void);

// Copy the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t fc_last_error_message(char *buf, size_t len);

// Build the kernel table for `(alpha, dim)`; requires `alpha > 0`, `dim >= 1`.
//
// # Safety
// `out` must be valid for a pointer write.
enum FcStatus fc_kernel_new(double alpha, size_t dim, struct FcKernel **out);

// Release a kernel; null is ignored.
//
// # Safety
// `kernel` must come from `fc_kernel_new` and not be used afterwards.
void fc_kernel_free(struct FcKernel *kernel);

// `K_alpha(r)` for `r > 0`, or `r = 0` when the kernel is bounded.
//
// # Safety
// `kernel` must be a live handle and `out` valid for a write.
enum FcStatus fc_kernel_eval(const struct FcKernel *kernel, double r, double *out);

// Sample an fBm path with `n_steps` steps on `[0, horizon]`. When
// `pad_epsilon > 0` the grid is extended so derivatives of width
// `pad_epsilon` are defined up to `horizon`.
//
// # Safety
// `out` must be valid for a pointer write.
enum FcStatus fc_path_sample(double hurst,
                             size_t dim,
                             double horizon,
                             size_t n_steps,
                             double pad_epsilon,
                             uint64_t seed,
                             struct FcPath **out);

// Release a path; null is ignored.
//
// # Safety
// `path` must come from `fc_path_sample` and not be used afterwards.
void fc_path_free(struct FcPath *path);

// Spatial dimension and number of grid nodes, padding included.
//
// # Safety
// `path` must be a live handle; `dim` and `n_nodes` valid for writes.
enum FcStatus fc_path_shape(const struct FcPath *path, size_t *dim, size_t *n_nodes);

// Copy coordinate `axis` of every node into `buf` of length `len`.
//
// # Safety
// `path` must be a live handle and `buf` valid for `len` writes.
enum FcStatus fc_path_coordinate(const struct FcPath *path, size_t axis, double *buf, size_t len);

// Per-path `Z = int int K_alpha(X_t - X_s) <D X_t, D X_s> dt ds` on `[0, T]`.
//
// # Safety
// `path` and `kernel` must be live handles and `out` valid for a write.
enum FcStatus fc_z_double_integral(const struct FcPath *path,
                                   const struct FcKernel *kernel,
                                   enum FcScheme scheme,
                                   double epsilon,
                                   double *out);

// Exact `E Z` for fBm of Hurst index `hurst` on `[0, horizon]`, with the
// quadrature error estimate in `abs_error` (may be null).
//
// # Safety
// `kernel` must be a live handle and `out` valid for a write.
enum FcStatus fc_expected_z_exact(const struct FcKernel *kernel,
                                  double hurst,
                                  enum FcScheme scheme,
                                  double epsilon,
                                  double horizon,
                                  double *out,
                                  double *abs_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FBM_CURRENTS_H */
