#ifndef SPOOFLAB_H
#define SPOOFLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SlShape {
  SL_SHAPE_CYLINDER = 0,
  SL_SHAPE_CORNER = 1,
  SL_SHAPE_PLANE = 2,
} SlShape;

typedef enum SlStatus {
  SL_STATUS_OK = 0,
  SL_STATUS_NULL_POINTER = 1,
  SL_STATUS_INVALID_UTF8 = 2,
  SL_STATUS_INVALID_ARGUMENT = 3,
  SL_STATUS_IO = 4,
  SL_STATUS_PARSE = 5,
  SL_STATUS_RUNTIME = 6,
  SL_STATUS_OUT_OF_RANGE = 7,
  SL_STATUS_PANIC = 8,
} SlStatus;

/**
 * Results of [`sl_run`].
 */
typedef struct SlRunResult SlRunResult;

/**
 * A validated scenario.
 */
typedef struct SlScenario SlScenario;

/**
 * Aggregate metrics of one run. `precision` and `recall` are NaN when
 * `has_detection` is 0.
 */
typedef struct SlSummary {
  uint32_t trials;
  double asr;
  double ape_max_mean;
  double ape_max_sd;
  uint8_t has_detection;
  double precision;
  double recall;
} SlSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *sl_version(void);

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *sl_last_error(void);

/**
 * Parses and validates scenario text. Relative replay paths resolve
 * against `base_dir`, which may be null for the working directory.
 *
 * # Safety
 * `text` and a non-null `base_dir` must be NUL-terminated strings; `out`
 * must point to writable storage for one handle.
 */
enum SlStatus sl_scenario_parse(const char *text, const char *base_dir, struct SlScenario **out);

/**
 * Loads and validates a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must point to writable
 * storage for one handle.
 */
enum SlStatus sl_scenario_load(const char *path, struct SlScenario **out);

/**
 * Number of validation findings for scenario text; parse errors are
 * returned as `Parse` with the message in [`sl_last_error`].
 *
 * # Safety
 * `text` must be a NUL-terminated string; `count` must be writable.
 */
enum SlStatus sl_scenario_findings(const char *text, size_t *count);

/**
 * # Safety
 * `scenario` must be null or a handle from this library not yet freed.
 */
void sl_scenario_free(struct SlScenario *scenario);

/**
 * Runs the scenario's trials in memory. `trials` 0 keeps the scenario's
 * count; `seed` is used only when `override_seed` is true.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must point to writable storage
 * for one handle.
 */
enum SlStatus sl_run(const struct SlScenario *scenario,
                     bool attack,
                     bool defense,
                     uint32_t trials,
                     bool override_seed,
                     uint64_t seed,
                     uint32_t jobs,
                     struct SlRunResult **out);

/**
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum SlStatus sl_run_summary(const struct SlRunResult *result, struct SlSummary *out);

/**
 * Per-trial maximum absolute position error, in seed order.
 *
 * # Safety
 * `result` must be a live handle; `ape_max` and `seed` must be writable.
 */
enum SlStatus sl_run_trial(const struct SlRunResult *result,
                           size_t index,
                           uint64_t *seed,
                           double *ape_max);

/**
 * # Safety
 * `result` must be null or a handle from this library not yet freed.
 */
void sl_run_free(struct SlRunResult *result);

/**
 * Sawtooth period that moves the wall by exactly `m_corr` per frame.
 *
 * # Safety
 * `out` must be writable.
 */
enum SlStatus sl_derive_cycle(double d_min, double d_max, double m_corr, double dt, double *out);

/**
 * Horizontal range of the injected shape at `theta` radians from the boresight.
 *
 * # Safety
 * `out` must be writable.
 */
enum SlStatus sl_fake_range(double theta, enum SlShape shape, double distance, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPOOFLAB_H */
