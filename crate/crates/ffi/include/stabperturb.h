#ifndef STABPERTURB_H
#define STABPERTURB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SP_OK 0

#define SP_ERR_NULL -1

#define SP_ERR_UTF8 -2

#define SP_ERR_PANIC -3

#define SP_ERR_PARSE -10

#define SP_ERR_VALIDATION -11

#define SP_ERR_IO -12

#define SP_ERR_BRACKET -13

#define SP_ERR_NOT_FOUND -14

#define SP_ERR_INVALID_ARGUMENT -15

/**
 * Any other library error; the message names its kind.
 */
#define SP_ERR_NUMERIC -20

/**
 * The result of one run: outcome, reports and constants.
 */
typedef struct SpBundle SpBundle;

/**
 * A validated scenario.
 */
typedef struct SpScenario SpScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *sp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sp_version(void);

/**
 * Loads a scenario from a file path or `builtin:NAME`.
 *
 * # Safety
 * `source` must be a NUL-terminated string; `out` must be writable.
 */
int32_t sp_scenario_load(const char *source, struct SpScenario **out);

/**
 * Parses and validates a scenario from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
int32_t sp_scenario_from_json(const char *json, struct SpScenario **out);

/**
 * Sets the scale factors on the scenario's perturbation columns.
 *
 * # Safety
 * `scenario` must come from `sp_scenario_load`/`sp_scenario_from_json`.
 */
int32_t sp_scenario_set_scales(struct SpScenario *scenario, double scale_b, double scale_c);

/**
 * Releases a scenario. Null is ignored.
 *
 * # Safety
 * `scenario` must be null or an unreleased handle from this library.
 */
void sp_scenario_free(struct SpScenario *scenario);

/**
 * Runs a subcommand (`certify`, `perturb`, `stability`, `threshold`,
 * `integral` or `scan`). For `threshold`, `lo > hi` or NaN bounds fall
 * back to the scenario's bracket.
 *
 * # Safety
 * Pointers must be valid as documented on the other entry points.
 */
int32_t sp_run(const struct SpScenario *scenario,
               const char *subcommand,
               double lo,
               double hi,
               struct SpBundle **out);

/**
 * Process exit code for the bundle's outcome: 0 preserved/certified,
 * 2 refuted/violated, 3 inconclusive. Returns `SP_ERR_NULL` for null.
 *
 * # Safety
 * `bundle` must be null or a live handle.
 */
int32_t sp_bundle_exit_code(const struct SpBundle *bundle);

/**
 * Looks up a named constant from the bundle's ledger.
 *
 * # Safety
 * `bundle` must be a live handle, `name` NUL-terminated, `value` writable.
 */
int32_t sp_bundle_constant(const struct SpBundle *bundle, const char *name, double *value);

/**
 * Serializes the bundle as JSON. Release the string with `sp_string_free`.
 *
 * # Safety
 * `bundle` must be a live handle; `out` must be writable.
 */
int32_t sp_bundle_to_json(const struct SpBundle *bundle, char **out);

/**
 * Writes the bundle JSON and CSV tables into `dir`.
 *
 * # Safety
 * `bundle` must be a live handle; `dir` NUL-terminated.
 */
int32_t sp_bundle_emit(const struct SpBundle *bundle, const char *dir);

/**
 * Releases a bundle. Null is ignored.
 *
 * # Safety
 * `bundle` must be null or an unreleased handle from this library.
 */
void sp_bundle_free(struct SpBundle *bundle);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string from `sp_bundle_to_json`.
 */
void sp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STABPERTURB_H */
