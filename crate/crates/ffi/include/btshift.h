#ifndef BTSHIFT_H
#define BTSHIFT_H

/* Generated by cbindgen from the btshift-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define BTSHIFT_OK 0

#define BTSHIFT_ERR_PANIC 1

#define BTSHIFT_ERR_CONFIG 2

#define BTSHIFT_ERR_DATA 3

#define BTSHIFT_ERR_NUMERICAL 4

#define BTSHIFT_ERR_ARGUMENT 5

// Opaque ranking-report handle.
typedef struct BtshiftReport BtshiftReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string; do not free.
const char *btshift_version(void);

// Most recent error message on this thread, or null; free the returned
// string with `btshift_string_free`.
char *btshift_last_error(void);

// Run an estimation config (JSON text; battle-log paths inside are resolved
// against the current directory) and hand back a report handle through
// `out`.
//
// # Safety
// `config_json` must be a valid NUL-terminated string and `out` a valid
// pointer; the returned handle must be released with `btshift_report_free`.
int32_t btshift_estimate_run(const char *config_json, struct BtshiftReport **out);

// Fit the marginal baseline on a battle log; same config schema as
// `btshift_estimate_run`.
//
// # Safety
// As for `btshift_estimate_run`.
int32_t btshift_marginal_bt_run(const char *config_json, struct BtshiftReport **out);

// Run a simulation config; the metrics rows come back as a JSON string to
// be released with `btshift_string_free`.
//
// # Safety
// `config_json` must be a valid NUL-terminated string and `out_json` a
// valid pointer.
int32_t btshift_simulate_run(const char *config_json, char **out_json);

// Number of players in the report (the reference player included, first).
//
// # Safety
// `report` must be a live handle from this library.
size_t btshift_report_num_players(const struct BtshiftReport *report);

// Player name at `index`; borrowed from the handle, do not free.
//
// # Safety
// `report` must be a live handle; the pointer is valid until the handle is
// freed.
const char *btshift_report_player_name(const struct BtshiftReport *report, size_t index);

// Point estimate of the player at `index` (zero for the reference player).
//
// # Safety
// `report` must be a live handle.
double btshift_report_estimate(const struct BtshiftReport *report, size_t index);

// Standard error of the player at `index`.
//
// # Safety
// `report` must be a live handle.
double btshift_report_std(const struct BtshiftReport *report, size_t index);

// Interval bounds of the player at `index`.
//
// # Safety
// `report` must be a live handle.
double btshift_report_ci_lower(const struct BtshiftReport *report, size_t index);

// # Safety
// `report` must be a live handle.
double btshift_report_ci_upper(const struct BtshiftReport *report, size_t index);

// Full report as JSON; release with `btshift_string_free`.
//
// # Safety
// `report` must be a live handle.
char *btshift_report_json(const struct BtshiftReport *report);

// Release a report handle.
//
// # Safety
// `report` must come from this library and not be used afterwards.
void btshift_report_free(struct BtshiftReport *report);

// Release a string returned by this library.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void btshift_string_free(char *s);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* BTSHIFT_H */
