#ifndef HFLOW_H
#define HFLOW_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HflowStatus {
  HFLOW_STATUS_OK = 0,
  HFLOW_STATUS_NULL_POINTER = 1,
  HFLOW_STATUS_INVALID_ARGUMENT = 2,
  HFLOW_STATUS_INVALID_LATTICE = 3,
  HFLOW_STATUS_SINGULAR_METRIC = 4,
  HFLOW_STATUS_BLOW_UP = 5,
  HFLOW_STATUS_SPEC_INFEASIBLE = 6,
  HFLOW_STATUS_IO = 7,
  HFLOW_STATUS_INTERNAL = 8,
} HflowStatus;

typedef enum HflowRoughKind {
  HFLOW_ROUGH_KIND_LOGLOG_SPIKE = 0,
  HFLOW_ROUGH_KIND_FOURIER_MULTISCALE = 1,
  HFLOW_ROUGH_KIND_POINT_SINGULAR_DEMO = 2,
  HFLOW_ROUGH_KIND_SMOOTH_WARP = 3,
} HflowRoughKind;

/**
 * Flow state on the flat background.
 */
typedef struct HflowFlow HflowFlow;

/**
 * Periodic lattice.
 */
typedef struct HflowLattice HflowLattice;

/**
 * SPD metric field on a lattice.
 */
typedef struct HflowMetric HflowMetric;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hflow_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated) and returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t hflow_last_error(char *buf, size_t len);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum HflowStatus hflow_lattice_new(size_t dim, size_t n, double period, struct HflowLattice **out);

/**
 * Number of nodes, or 0 for a null handle.
 *
 * # Safety
 * `lat` must be null or a live lattice handle.
 */
size_t hflow_lattice_node_count(const struct HflowLattice *lat);

/**
 * # Safety
 * `lat` must be null or a handle from [`hflow_lattice_new`], freed once.
 */
void hflow_lattice_free(struct HflowLattice *lat);

/**
 * # Safety
 * `lat` must be a live lattice handle and `out` a valid handle slot.
 */
enum HflowStatus hflow_metric_identity(const struct HflowLattice *lat, struct HflowMetric **out);

/**
 * Generates rough data with the default shape parameters of `kind`.
 *
 * # Safety
 * `lat` must be a live lattice handle and `out` a valid handle slot.
 */
enum HflowStatus hflow_metric_rough(const struct HflowLattice *lat,
                                    enum HflowRoughKind kind,
                                    double lambda0,
                                    uint64_t seed,
                                    struct HflowMetric **out);

/**
 * Builds a metric from packed symmetric components, node-major, upper
 * triangle row by row (`g11 g12 g13 g22 g23 g33` in 3D).
 *
 * # Safety
 * `lat` must be a live lattice handle, `data` must point to `len` doubles
 * and `out` must be a valid handle slot.
 */
enum HflowStatus hflow_metric_from_components(const struct HflowLattice *lat,
                                              const double *data,
                                              size_t len,
                                              struct HflowMetric **out);

/**
 * Number of doubles [`hflow_metric_components`] writes.
 *
 * # Safety
 * `g` must be null or a live metric handle.
 */
size_t hflow_metric_component_count(const struct HflowMetric *g);

/**
 * # Safety
 * `g` must be a live metric handle and `buf` must point to `len` doubles.
 */
enum HflowStatus hflow_metric_components(const struct HflowMetric *g, double *buf, size_t len);

/**
 * Gaussian (`gaussian != 0`) or box mollification at scale `sigma`.
 *
 * # Safety
 * `g` must be a live metric handle and `out` a valid handle slot.
 */
enum HflowStatus hflow_metric_mollify(const struct HflowMetric *g,
                                      double sigma,
                                      bool gaussian,
                                      struct HflowMetric **out);

/**
 * Extreme eigenvalues of `g` relative to the Euclidean metric.
 *
 * # Safety
 * `g` must be a live metric handle; `lambda_min` and `lambda_max` must be
 * valid pointers.
 */
enum HflowStatus hflow_metric_bilipschitz(const struct HflowMetric *g,
                                          double *lambda_min,
                                          double *lambda_max);

/**
 * Range of the scalar curvature with fourth-order stencils.
 *
 * # Safety
 * `g` must be a live metric handle; `min` and `max` must be valid pointers.
 */
enum HflowStatus hflow_metric_scalar_range(const struct HflowMetric *g, double *min, double *max);

/**
 * # Safety
 * `g` must be a live metric handle and `path` a NUL-terminated string.
 */
enum HflowStatus hflow_metric_save(const struct HflowMetric *g, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid handle slot.
 */
enum HflowStatus hflow_metric_load(const char *path, struct HflowMetric **out);

/**
 * # Safety
 * `g` must be null or a metric handle, freed once.
 */
void hflow_metric_free(struct HflowMetric *g);

/**
 * Starts a flow at `t = 0` from a copy of `g` on the flat background, with
 * RK4 steps and fourth-order stencils at CFL safety `cfl` in `(0, 1]`.
 *
 * # Safety
 * `g` must be a live metric handle and `out` a valid handle slot.
 */
enum HflowStatus hflow_flow_new(const struct HflowMetric *g, double cfl, struct HflowFlow **out);

/**
 * Evolves to `t_end`, landing on it exactly. After a blow-up the flow stays
 * at the last healthy time.
 *
 * # Safety
 * `f` must be a live flow handle.
 */
enum HflowStatus hflow_flow_evolve(struct HflowFlow *f, double t_end);

/**
 * Current time, or NaN for a null handle.
 *
 * # Safety
 * `f` must be null or a live flow handle.
 */
double hflow_flow_time(const struct HflowFlow *f);

/**
 * Number of steps taken so far.
 *
 * # Safety
 * `f` must be null or a live flow handle.
 */
uint64_t hflow_flow_steps(const struct HflowFlow *f);

/**
 * Copies the current metric into a new handle.
 *
 * # Safety
 * `f` must be a live flow handle and `out` a valid handle slot.
 */
enum HflowStatus hflow_flow_metric(const struct HflowFlow *f, struct HflowMetric **out);

/**
 * # Safety
 * `f` must be null or a flow handle, freed once.
 */
void hflow_flow_free(struct HflowFlow *f);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HFLOW_H */
