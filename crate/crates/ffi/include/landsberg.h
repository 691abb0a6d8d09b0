#ifndef LANDSBERG_H
#define LANDSBERG_H

#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum LbStatus {
  LB_STATUS_OK = 0,
  LB_STATUS_NULL_POINTER = 1,
  // The caller passed something unusable, such as an unknown metric name.
  LB_STATUS_INVALID_ARGUMENT = 2,
  // A geometric or integration failure (point outside the chart, ...).
  LB_STATUS_NUMERICAL = 3,
  // An internal panic was caught at the boundary.
  LB_STATUS_INTERNAL = 4,
} LbStatus;

// Opaque Finsler space.
typedef struct LbSpace LbSpace;

// Residuals and flags from a classification scan.
typedef struct LbClassification {
  double landsberg_residual;
  double berwald_residual;
  double cartan_residual;
  // 1 when the residual is below the "holds" threshold.
  int32_t is_landsberg;
  int32_t is_berwald;
  int32_t is_riemannian;
} LbClassification;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *lb_last_error(void);

// Library version as a static NUL-terminated string.
const char *lb_version(void);

// Creates a catalog metric. `dimension` is only read by `euclidean`; pass 0
// for the default.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum LbStatus lb_space_builtin(const char *name, size_t dimension, struct LbSpace **out);

// Creates a space from an expression in `x1..xm`, `u1..um` on the box
// `[lo[i], hi[i]]`.
//
// # Safety
// `text` must be NUL-terminated, `lo` and `hi` must hold `dimension` values
// and `out` must be valid.
enum LbStatus lb_space_expression(const char *text,
                                  size_t dimension,
                                  const double *lo,
                                  const double *hi,
                                  struct LbSpace **out);

// Releases a space. Null is ignored.
//
// # Safety
// `space` must come from a constructor in this library and not be used
// afterwards.
void lb_space_free(struct LbSpace *space);

// Base dimension `m`, or 0 for a null handle.
//
// # Safety
// `space` must be null or a live handle.
size_t lb_space_dimension(const struct LbSpace *space);

// `F(x, u)`. Fails for base points outside the chart.
//
// # Safety
// `x` and `u` must hold `m` values; `out` must be valid.
enum LbStatus lb_finsler_function(const struct LbSpace *space,
                                  const double *x,
                                  const double *u,
                                  double *out);

// Fundamental tensor `g_ab(x, u)` into `out[a*m + b]`.
//
// # Safety
// `x` and `u` must hold `m` values, `out` room for `m*m`.
enum LbStatus lb_fundamental_tensor(const struct LbSpace *space,
                                    const double *x,
                                    const double *u,
                                    double *out);

// Spray coefficients `G^i(x, u)`.
//
// # Safety
// `x`, `u` and `out` must hold `m` values.
enum LbStatus lb_spray(const struct LbSpace *space, const double *x, const double *u, double *out);

// Nonlinear connection `Γ^i_j(x, u)` into `out[i*m + j]`.
//
// # Safety
// `x` and `u` must hold `m` values, `out` room for `m*m`.
enum LbStatus lb_nonlinear_connection(const struct LbSpace *space,
                                      const double *x,
                                      const double *u,
                                      double *out);

// Parallel transport of `u0` along the smoothed polyline through
// `n_vertices` points (`vertices[k*m + i]`). Writes the endpoint to `out_u`
// and, when `out_drift` is non-null, the F-drift. `tol <= 0` selects the
// default integrator tolerance.
//
// # Safety
// `vertices` must hold `n_vertices*m` values, `u0` and `out_u` `m` values;
// `out_drift` may be null.
enum LbStatus lb_transport_polyline(const struct LbSpace *space,
                                    const double *vertices,
                                    size_t n_vertices,
                                    const double *u0,
                                    double tol,
                                    double *out_u,
                                    double *out_drift);

// Residual scan over `grid_points` quasi-random base points.
//
// # Safety
// `out` must be valid.
enum LbStatus lb_classify(const struct LbSpace *space,
                          size_t grid_points,
                          struct LbClassification *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANDSBERG_H */
