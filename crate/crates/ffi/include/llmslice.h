#ifndef LLMSLICE_H
#define LLMSLICE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Use the mode named in the scenario.
 */
#define LLMSLICE_MODE_SCENARIO 0

#define LLMSLICE_MODE_SHARED 1

#define LLMSLICE_MODE_STATIC 2

#define LLMSLICE_MODE_DYNAMIC 3

typedef enum LlmsliceStatus {
  LLMSLICE_STATUS_OK = 0,
  LLMSLICE_STATUS_NULL_ARGUMENT = 1,
  LLMSLICE_STATUS_INVALID_UTF8 = 2,
  LLMSLICE_STATUS_INVALID_ARGUMENT = 3,
  /**
   * Scenario or permissions rejected.
   */
  LLMSLICE_STATUS_CONFIG_ERROR = 4,
  /**
   * The simulation aborted.
   */
  LLMSLICE_STATUS_RUNTIME_ERROR = 5,
  /**
   * A metric is undefined (no streams started, zero baseline).
   */
  LLMSLICE_STATUS_METRICS_ERROR = 6,
  LLMSLICE_STATUS_IO_ERROR = 7,
  LLMSLICE_STATUS_PANIC = 8,
} LlmsliceStatus;

/**
 * Opaque finished run.
 */
typedef struct LlmsliceRun LlmsliceRun;

/**
 * Opaque parsed scenario.
 */
typedef struct LlmsliceScenario LlmsliceScenario;

/**
 * Headline metrics of one run or one seed-averaged mode. Latencies are NaN
 * when no response completed.
 */
typedef struct LlmsliceMetrics {
  double mean_completion_latency_ms;
  double mean_first_byte_latency_ms;
  double utilization;
  double stability;
  uint64_t requests;
  uint64_t started;
  uint64_t completed;
  uint64_t aborted;
  uint64_t rejected;
} LlmsliceMetrics;

/**
 * Improvements are percentages rounded to one decimal.
 */
typedef struct LlmsliceComparison {
  struct LlmsliceMetrics baseline;
  struct LlmsliceMetrics treatment;
  double latency_improvement_pct;
  double utilization_improvement_pct;
  double stability_improvement_pct;
} LlmsliceComparison;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a scenario document. `permissions_csv` may be null, in which case a
 * scenario without a `permissions` key allows every UE its listed services.
 *
 * # Safety
 * `json` and (if non-null) `permissions_csv` must be NUL-terminated strings;
 * `out` must be a valid pointer.
 */
enum LlmsliceStatus llmslice_scenario_parse(const char *json,
                                            const char *permissions_csv,
                                            struct LlmsliceScenario **out);

/**
 * Loads a scenario file, resolving its permissions file relative to it.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum LlmsliceStatus llmslice_scenario_load(const char *path, struct LlmsliceScenario **out);

/**
 * # Safety
 * `scenario` must be null or a handle from this library not yet freed.
 */
void llmslice_scenario_free(struct LlmsliceScenario *scenario);

/**
 * Runs one seed. `mode` is one of the `LLMSLICE_MODE_*` constants.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be a valid pointer.
 */
enum LlmsliceStatus llmslice_run(const struct LlmsliceScenario *scenario,
                                 uint64_t seed,
                                 int32_t mode,
                                 struct LlmsliceRun **out);

/**
 * # Safety
 * `run` must be null or a handle from [`llmslice_run`] not yet freed.
 */
void llmslice_run_free(struct LlmsliceRun *run);

/**
 * # Safety
 * `run` must be a live handle; `out` must be a valid pointer.
 */
enum LlmsliceStatus llmslice_run_metrics(const struct LlmsliceRun *run,
                                         struct LlmsliceMetrics *out);

/**
 * The flat `summary.json` document.
 *
 * # Safety
 * `run` must be a live handle; `out` must be a valid pointer.
 */
enum LlmsliceStatus llmslice_run_summary_json(const struct LlmsliceRun *run, char **out);

/**
 * The `deliveries.csv` document.
 *
 * # Safety
 * `run` must be a live handle; `out` must be a valid pointer.
 */
enum LlmsliceStatus llmslice_run_deliveries_csv(const struct LlmsliceRun *run, char **out);

/**
 * Hex SHA-256 of the run's event log.
 *
 * # Safety
 * `run` must be a live handle; `out` must be a valid pointer.
 */
enum LlmsliceStatus llmslice_run_trace_digest(const struct LlmsliceRun *run, char **out);

/**
 * Runs both modes over `seeds` and compares the seed-averaged summaries.
 *
 * # Safety
 * `scenario` must be a live handle, `seeds` must point to `n_seeds` values
 * and `out` must be a valid pointer.
 */
enum LlmsliceStatus llmslice_compare(const struct LlmsliceScenario *scenario,
                                     int32_t baseline,
                                     int32_t treatment,
                                     const uint64_t *seeds,
                                     size_t n_seeds,
                                     struct LlmsliceComparison *out);

/**
 * Downlink bytes one PRB carries per TTI at `cqi`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LlmsliceStatus llmslice_bytes_per_prb(uint8_t cqi, uint32_t *out);

/**
 * # Safety
 * `s` must be null or a string returned by this library not yet freed.
 */
void llmslice_string_free(char *s);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *llmslice_last_error_message(void);

const char *llmslice_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LLMSLICE_H */
