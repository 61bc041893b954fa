#ifndef FEDCACHE_H
#define FEDCACHE_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Placement solver selector.
 */
typedef enum FcSolver {
  FC_SOLVER_GREEDY = 0,
  FC_SOLVER_ORACLE = 1,
} FcSolver;

/**
 * Status code of every fallible call.
 */
typedef enum FcStatus {
  FC_OK = 0,
  FC_NULL_ARGUMENT = 1,
  FC_INVALID_ARGUMENT = 2,
  FC_PARSE_ERROR = 3,
  FC_IO_ERROR = 4,
  FC_TOO_LARGE = 5,
  FC_INTERNAL = 6,
} FcStatus;

/**
 * Opaque placement instance handle.
 */
typedef struct FcInstance FcInstance;

/**
 * Opaque solved-placement handle.
 */
typedef struct FcPlacement FcPlacement;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code.
 */
const char *fc_status_message(enum FcStatus status);

/**
 * Library version as a static string.
 */
const char *fc_version(void);

/**
 * Build a placement instance from raw arrays.
 *
 * `sizes` holds `file_count` entries, `capacities` holds `sbs_count`, and
 * `lambda` is the row-major `sbs_count * file_count` expected-density table.
 *
 * # Safety
 * All three arrays must be valid for the stated lengths and `out` must be a
 * valid pointer; the returned handle must be released with
 * [`fc_instance_free`].
 */
enum FcStatus fc_instance_new(uint32_t sbs_count,
                              uint32_t file_count,
                              double cache_cost,
                              double sbs_retrieval,
                              double mbs_base,
                              double mbs_link,
                              const double *sizes,
                              const double *capacities,
                              const double *lambda,
                              struct FcInstance **out);

/**
 * Parse a plain-text instance file (the `placement --instance` format).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer; the
 * returned handle must be released with [`fc_instance_free`].
 */
enum FcStatus fc_instance_from_file(const char *path, struct FcInstance **out);

/**
 * Release an instance handle. Null is accepted.
 *
 * # Safety
 * `instance` must have come from `fc_instance_new` or
 * `fc_instance_from_file` and not have been freed already.
 */
void fc_instance_free(struct FcInstance *instance);

/**
 * Number of SBS rows of an instance; 0 for null.
 *
 * # Safety
 * `instance` must be a live handle or null.
 */
uint32_t fc_instance_sbs_count(const struct FcInstance *instance);

/**
 * Number of catalog files of an instance; 0 for null.
 *
 * # Safety
 * `instance` must be a live handle or null.
 */
uint32_t fc_instance_file_count(const struct FcInstance *instance);

/**
 * Solve an instance and hand back a placement handle.
 *
 * # Safety
 * `instance` must be a live handle and `out` a valid pointer; the returned
 * handle must be released with [`fc_placement_free`].
 */
enum FcStatus fc_solve(const struct FcInstance *instance,
                       enum FcSolver solver,
                       struct FcPlacement **out);

/**
 * Release a placement handle. Null is accepted.
 *
 * # Safety
 * `placement` must have come from `fc_solve` and not have been freed
 * already.
 */
void fc_placement_free(struct FcPlacement *placement);

/**
 * Objective value of a solved placement; NaN for null.
 *
 * # Safety
 * `placement` must be a live handle or null.
 */
double fc_placement_cost(const struct FcPlacement *placement);

/**
 * Accepted greedy iterations of a solved placement; 0 for null.
 *
 * # Safety
 * `placement` must be a live handle or null.
 */
uint32_t fc_placement_iterations(const struct FcPlacement *placement);

/**
 * Whether file `file` is cached at SBS `sbs`: 1 yes, 0 no, -1 on a null
 * handle or an out-of-range index.
 *
 * # Safety
 * `placement` must be a live handle or null.
 */
int32_t fc_placement_cached(const struct FcPlacement *placement, uint32_t sbs, uint32_t file);

/**
 * Evaluate the network cost of an arbitrary binary placement given as a
 * row-major 0/1 array of `sbs_count * file_count` entries.
 *
 * # Safety
 * `entries` must hold `sbs_count * file_count` bytes and `out` must be a
 * valid pointer; `instance` must be a live handle.
 */
enum FcStatus fc_network_cost(const struct FcInstance *instance,
                              const uint8_t *entries,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDCACHE_H */
