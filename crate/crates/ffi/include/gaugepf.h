#ifndef GAUGEPF_H
#define GAUGEPF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GpfStatus {
  GPF_STATUS_OK = 0,
  GPF_STATUS_NULL_POINTER = 1,
  GPF_STATUS_INVALID_UTF8 = 2,
  GPF_STATUS_PARSE_ERROR = 3,
  GPF_STATUS_INVALID_ARGUMENT = 4,
  GPF_STATUS_ENUMERATION_GUARD = 5,
  GPF_STATUS_NOT_CONVERGED = 6,
  GPF_STATUS_BUFFER_TOO_SMALL = 7,
  GPF_STATUS_INTERNAL = 8,
  GPF_STATUS_PANIC = 9,
} GpfStatus;

/**
 * Opaque model handle.
 */
typedef struct GpfModel GpfModel;

/**
 * Solver settings; obtain defaults from `gpf_solver_options_default`.
 */
typedef struct GpfSolverOptions {
  double damping;
  double tol;
  size_t max_sweeps;
  size_t restarts;
  uint64_t seed;
  double soften;
} GpfSolverOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gpf_version(void);

/**
 * Default solver settings.
 */
struct GpfSolverOptions gpf_solver_options_default(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns its full length in bytes. Returns 0
 * when there is no error. `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must be null or point to at least `len` writable bytes.
 */
size_t gpf_last_error_message(char *buf, size_t len);

/**
 * Parses a JSON model. On success `*out` holds a new handle.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum GpfStatus gpf_model_from_json(const char *json, struct GpfModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void gpf_model_free(struct GpfModel *model);

/**
 * Serialises the model; free the result with `gpf_string_free`.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum GpfStatus gpf_model_to_json(const struct GpfModel *model, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void gpf_string_free(char *s);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum GpfStatus gpf_model_num_edges(const struct GpfModel *model, size_t *out);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum GpfStatus gpf_model_num_nodes(const struct GpfModel *model, size_t *out);

/**
 * Exact `Z` by enumeration; refused above `guard` edges (0 means the default guard).
 *
 * # Safety
 * `model` must be a live handle; `z_out` must be writable.
 */
enum GpfStatus gpf_partition_exact(const struct GpfModel *model, size_t guard, double *z_out);

/**
 * Maximal BP gauge. Writes `Z_vbp` to `z_out` and, when `gauge_out` is not
 * null, the gauge as `(x+, x-)` pairs in edge order; `gauge_len` must then be
 * at least twice the edge count. `opts` may be null for defaults.
 *
 * # Safety
 * `model` must be a live handle; `z_out` writable; `gauge_out` null or
 * pointing to `gauge_len` writable doubles.
 */
enum GpfStatus gpf_bp_solve(const struct GpfModel *model,
                            const struct GpfSolverOptions *opts,
                            double *z_out,
                            double *gauge_out,
                            size_t gauge_len);

/**
 * Loop series at the maximal BP gauge: the sum and the number of generalized loops.
 *
 * # Safety
 * `model` must be a live handle; `sum_out` and `count_out` writable; `opts` null or valid.
 */
enum GpfStatus gpf_loop_series(const struct GpfModel *model,
                               const struct GpfSolverOptions *opts,
                               double *sum_out,
                               size_t *count_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAUGEPF_H */
