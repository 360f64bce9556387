#ifndef MIMS_H
#define MIMS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum MimsStatus {
  MIMS_STATUS_OK = 0,
  MIMS_STATUS_NULL_POINTER = 1,
  MIMS_STATUS_INVALID_UTF8 = 2,
  MIMS_STATUS_CONFIG = 3,
  MIMS_STATUS_TRACE = 4,
  MIMS_STATUS_CODEC = 5,
  MIMS_STATUS_SIMULATION = 6,
  MIMS_STATUS_IO = 7,
  MIMS_STATUS_PANIC = 8,
} MimsStatus;

/**
 * Simulator modes.
 */
typedef enum MimsMode {
  MIMS_MODE_DDR = 0,
  MIMS_MODE_BOB = 1,
  MIMS_MODE_MI1 = 2,
  MIMS_MODE_MI_MUL = 3,
} MimsMode;

/**
 * Opaque simulation configuration.
 */
typedef struct MimsConfig MimsConfig;

/**
 * Opaque run report.
 */
typedef struct MimsReport MimsReport;

/**
 * Headline numbers of a report.
 */
typedef struct MimsSummary {
  uint64_t cycles;
  uint64_t runtime_ps;
  uint64_t instructions;
  uint64_t mem_requests;
  uint64_t useful_bytes;
  double speedup;
  double bw_utilization;
  double read_latency_ns;
  double write_latency_ns;
  double energy_j;
  double edp;
  double normalized_edp;
  double requests_per_packet;
  /**
   * Address compression ratio, or 0 when compression was off.
   */
  double compression_ratio;
} MimsSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer is valid until the next library call on the same thread.
 */
const char *mims_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mims_version(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void mims_string_free(char *s);

/**
 * Creates a config with default values.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum MimsStatus mims_config_new(struct MimsConfig **out);

/**
 * Parses a config from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` a valid pointer.
 */
enum MimsStatus mims_config_from_toml(const char *toml, struct MimsConfig **out);

/**
 * Renders the config as TOML.
 *
 * # Safety
 * `cfg` must be a live handle; `out` a valid pointer.
 */
enum MimsStatus mims_config_to_toml(const struct MimsConfig *cfg, char **out);

/**
 * Applies one `key=value` override, e.g. `timing.trcd=12`.
 *
 * # Safety
 * `cfg` must be a live handle; `assignment` a NUL-terminated string.
 */
enum MimsStatus mims_config_set(struct MimsConfig *cfg, const char *assignment);

/**
 * Sets the memory-system mode.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum MimsStatus mims_config_set_mode(struct MimsConfig *cfg, enum MimsMode mode);

/**
 * Checks the config for illegal combinations.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum MimsStatus mims_config_validate(const struct MimsConfig *cfg);

/**
 * Frees a config. Null is ignored.
 *
 * # Safety
 * `cfg` must come from this library and not have been freed.
 */
void mims_config_free(struct MimsConfig *cfg);

/**
 * Runs one simulation.
 *
 * # Safety
 * `cfg` must be a live handle; `out` a valid pointer.
 */
enum MimsStatus mims_run(const struct MimsConfig *cfg, struct MimsReport **out);

/**
 * Runs `cfg` in each of `n` modes and writes the reports, normalized to
 * DDR, as JSON lines.
 *
 * # Safety
 * `cfg` must be a live handle; `modes` must point to `n` values; `out` a
 * valid pointer.
 */
enum MimsStatus mims_compare_json(const struct MimsConfig *cfg,
                                  const enum MimsMode *modes,
                                  size_t n,
                                  char **out);

/**
 * Copies the headline numbers of a report.
 *
 * # Safety
 * `report` must be a live handle; `out` a valid pointer.
 */
enum MimsStatus mims_report_summary(const struct MimsReport *report, struct MimsSummary *out);

/**
 * Serializes the full report as JSON.
 *
 * # Safety
 * `report` must be a live handle; `out` a valid pointer.
 */
enum MimsStatus mims_report_json(const struct MimsReport *report, char **out);

/**
 * Frees a report. Null is ignored.
 *
 * # Safety
 * `report` must come from this library and not have been freed.
 */
void mims_report_free(struct MimsReport *report);

/**
 * Pretty-prints one wire packet. `compression` names the receiver's
 * scheme (`none`, `single`, `multi_inline`, `multi_offline`) or is null.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes; `compression` is null or a
 * NUL-terminated string; `out` a valid pointer.
 */
enum MimsStatus mims_packet_dump(const uint8_t *bytes,
                                 size_t len,
                                 const char *compression,
                                 char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIMS_H */
