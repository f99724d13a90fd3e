#ifndef SACBF_H
#define SACBF_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SacbfStatus {
  SACBF_STATUS_OK = 0,
  SACBF_STATUS_NULL_POINTER = 1,
  SACBF_STATUS_INVALID_ARGUMENT = 2,
  SACBF_STATUS_DOMAIN = 3,
  SACBF_STATUS_CONFIG = 4,
  SACBF_STATUS_IO = 5,
  SACBF_STATUS_SIMULATION = 6,
  SACBF_STATUS_OUT_OF_RANGE = 7,
  SACBF_STATUS_BUFFER_TOO_SMALL = 8,
  SACBF_STATUS_PANIC = 9,
} SacbfStatus;

typedef enum SacbfController {
  SACBF_CONTROLLER_HOCBF = 0,
  SACBF_CONTROLLER_SACBF = 1,
  SACBF_CONTROLLER_R_SACBF = 2,
} SacbfController;

typedef enum SacbfStepStatus {
  SACBF_STEP_STATUS_OPTIMAL = 0,
  SACBF_STEP_STATUS_INFEASIBLE = 1,
  SACBF_STEP_STATUS_SET_EXIT = 2,
} SacbfStepStatus;

/**
 * Opaque scenario handle.
 */
typedef struct SacbfScenario SacbfScenario;

/**
 * Opaque trace handle.
 */
typedef struct SacbfTrace SacbfTrace;

/**
 * Run-level counters of a trace.
 */
typedef struct SacbfSummary {
  size_t steps;
  size_t optimal_steps;
  size_t infeasible_steps;
  size_t set_exit_steps;
  size_t dominance_violations;
  size_t tube_violations;
  size_t audit_violations;
} SacbfSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty if none). The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *sacbf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sacbf_version(void);

/**
 * Lower envelope at `dt` of `psi' >= -lambda psi^eta` started from `psi0`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `double`.
 */
enum SacbfStatus sacbf_comparison_lower_bound(double psi0,
                                              double lambda,
                                              double eta,
                                              double dt,
                                              double *out);

/**
 * Unicycle vector field `f(x) + g u` for `state = (x, y, theta, v)` and
 * `input = (turn rate, acceleration)`; writes four values to `out`.
 *
 * # Safety
 * `state` and `out` must point to four `double`s, `input` to two.
 */
enum SacbfStatus sacbf_unicycle_field(const double *state, const double *input, double *out);

/**
 * Reads and validates a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SacbfStatus sacbf_scenario_load(const char *path, struct SacbfScenario **out);

/**
 * Parses and validates a scenario document held in memory.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum SacbfStatus sacbf_scenario_parse(const char *text, struct SacbfScenario **out);

/**
 * # Safety
 * `scenario` must be null or a handle from this library not yet freed.
 */
void sacbf_scenario_free(struct SacbfScenario *scenario);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
enum SacbfStatus sacbf_scenario_set_heading(struct SacbfScenario *scenario, double heading);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
enum SacbfStatus sacbf_scenario_set_controller(struct SacbfScenario *scenario,
                                               enum SacbfController controller);

/**
 * # Safety
 * `scenario` must be a live handle.
 */
enum SacbfStatus sacbf_scenario_set_seed(struct SacbfScenario *scenario, uint64_t seed);

/**
 * Runs the closed loop for the scenario's horizon.
 *
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
enum SacbfStatus sacbf_simulate(const struct SacbfScenario *scenario, struct SacbfTrace **out);

/**
 * # Safety
 * `trace` must be null or a handle from this library not yet freed.
 */
void sacbf_trace_free(struct SacbfTrace *trace);

/**
 * # Safety
 * `trace` must be a live handle and `out` writable.
 */
enum SacbfStatus sacbf_trace_summary(const struct SacbfTrace *trace, struct SacbfSummary *out);

/**
 * Sampling time, state and held input of step `k`. `state` needs room for the
 * model's state dimension, `input` for its input dimension.
 *
 * # Safety
 * `trace` must be a live handle; buffers must hold the stated lengths.
 */
enum SacbfStatus sacbf_trace_step(const struct SacbfTrace *trace,
                                  size_t k,
                                  double *t,
                                  double *state,
                                  size_t state_len,
                                  double *input,
                                  size_t input_len,
                                  enum SacbfStepStatus *status);

/**
 * Number of barrier chains in the trace.
 *
 * # Safety
 * `trace` must be a live handle and `out` writable.
 */
enum SacbfStatus sacbf_trace_chain_count(const struct SacbfTrace *trace, size_t *out);

/**
 * Dense-grid minimum of `psi_0` and the reach time (NaN when the chain is not
 * a reach chain or never reached its region) of chain `i`.
 *
 * # Safety
 * `trace` must be a live handle; `min_psi0` and `reach_time` writable.
 */
enum SacbfStatus sacbf_trace_chain_result(const struct SacbfTrace *trace,
                                          size_t i,
                                          double *min_psi0,
                                          double *reach_time);

/**
 * Writes the trace, audit and summary files into `dir`.
 *
 * # Safety
 * `trace` must be a live handle and `dir` a NUL-terminated string.
 */
enum SacbfStatus sacbf_trace_write(const struct SacbfTrace *trace, const char *dir, bool figures);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SACBF_H */
