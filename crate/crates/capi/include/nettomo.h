#ifndef NETTOMO_H
#define NETTOMO_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum nt_status {
  NT_STATUS_OK = 0,
  // A required pointer argument was NULL.
  NT_STATUS_NULL_ARGUMENT = 1,
  // An input string was not valid UTF-8.
  NT_STATUS_INVALID_UTF8 = 2,
  // Configuration error (bad values, unknown keys, unknown names).
  NT_STATUS_CONFIG = 3,
  // Contract violation (mismatched dimensions, missing inputs).
  NT_STATUS_CONTRACT = 4,
  // A computation failed (infeasible observations, solver breakdown).
  NT_STATUS_COMPUTE = 5,
  NT_STATUS_IO = 6,
  NT_STATUS_JSON = 7,
  // A panic was caught at the boundary; state may be stale.
  NT_STATUS_PANIC = 8,
} nt_status;

// Opaque run configuration.
typedef struct nt_config nt_config;

// Opaque simulation artifact (topology, baseline, scheme, observations,
// and optionally ground truth plus raw traffic).
typedef struct nt_simulation nt_simulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *nt_version(void);

// Message of the last failing call on this thread; valid until the next
// failing call. Do not free.
const char *nt_last_error_message(void);

// Frees a string returned by this library.
void nt_string_free(char *s);

// Creates the default (desk-scale) configuration.
enum nt_status nt_config_default(struct nt_config **out);

// Parses a configuration document (strict: unknown keys rejected).
//
// # Safety
// `json` must be a valid NUL-terminated string or NULL.
enum nt_status nt_config_from_json(const char *json, struct nt_config **out);

// Overrides the root seed.
//
// # Safety
// `config` must be a live handle from this library or NULL.
enum nt_status nt_config_set_seed(struct nt_config *config, uint64_t seed);

// Switches to the reference scale (10 nodes, T = 150, 200 trials).
//
// # Safety
// `config` must be a live handle from this library or NULL.
enum nt_status nt_config_paper_scale(struct nt_config *config);

// # Safety
// `config` must be a handle from this library, freed at most once.
void nt_config_free(struct nt_config *config);

// Draws a network, traffic, and observations for one trial index.
//
// # Safety
// Pointers must be valid or NULL.
enum nt_status nt_simulate(const struct nt_config *config,
                           uint64_t trial,
                           struct nt_simulation **out);

// Loads a simulation artifact from its JSON form.
//
// # Safety
// Pointers must be valid or NULL.
enum nt_status nt_simulation_from_json(const char *json, struct nt_simulation **out);

// Serializes a simulation artifact to JSON.
//
// # Safety
// Pointers must be valid or NULL.
enum nt_status nt_simulation_to_json(const struct nt_simulation *sim, char **out_json);

// # Safety
// `sim` must be a handle from this library, freed at most once.
void nt_simulation_free(struct nt_simulation *sim);

// Runs one estimator on a simulation; returns the estimate report as JSON.
//
// # Safety
// Pointers must be valid or NULL.
enum nt_status nt_estimate(const struct nt_config *config,
                           const struct nt_simulation *sim,
                           const char *estimator,
                           char **out_report_json);

// Estimates, calibrates a null threshold, and tests against the baseline;
// returns the detection result as JSON.
//
// # Safety
// Pointers must be valid or NULL.
enum nt_status nt_detect(const struct nt_config *config,
                         const struct nt_simulation *sim,
                         const char *estimator,
                         char **out_json);

// Runs a study from the config, writing tables under `out_dir`; returns the
// one-line summary.
//
// # Safety
// Pointers must be valid or NULL.
enum nt_status nt_run_study(const struct nt_config *config,
                            const char *out_dir,
                            char **out_summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NETTOMO_H */
