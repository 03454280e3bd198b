#ifndef PATHCONTROL_H
#define PATHCONTROL_H

/* Generated by cbindgen from the pathcontrol-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every entry point.
 */
typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_POINTER = 1,
  PC_STATUS_INVALID_UTF8 = 2,
  PC_STATUS_INVALID_CONFIG = 3,
  PC_STATUS_NUMERIC = 4,
  PC_STATUS_CAP_EXCEEDED = 5,
  PC_STATUS_IO = 6,
  PC_STATUS_UNKNOWN = 7,
} PcStatus;

/**
 * Opaque experiment configuration handle.
 */
typedef struct PcConfig {
  uint8_t _opaque[0];
} PcConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message on this thread into `buf` (NUL-terminated,
 * truncated to `cap`). Returns the full message length in bytes.
 */
uintptr_t pc_last_error(char *buf, uintptr_t cap);

/**
 * Library version as a static string.
 */
const char *pc_version(void);

/**
 * Parse a flat key-value config; on success writes a new handle.
 */
enum PcStatus pc_config_parse(const char *text, struct PcConfig **out);

/**
 * New handle with all defaults.
 */
enum PcStatus pc_config_default(struct PcConfig **out);

enum PcStatus pc_config_set_seed(struct PcConfig *handle, uint64_t seed);

void pc_config_free(struct PcConfig *handle);

/**
 * Canonical flat echo of the config; free with `pc_string_free`.
 */
enum PcStatus pc_config_echo(const struct PcConfig *handle, char **out);

void pc_string_free(char *s);

/**
 * Exact closed-loop tree value of the configured experiment.
 */
enum PcStatus pc_value_tree(const struct PcConfig *handle, double *out_value);

/**
 * Monte Carlo family value with standard error.
 */
enum PcStatus pc_value_mc(const struct PcConfig *handle, double *out_value, double *out_std_error);

/**
 * Upper and lower G-expectation for the model's volatility band.
 */
enum PcStatus pc_gexp_pair(const struct PcConfig *handle, double *out_upper, double *out_lower);

/**
 * Tree DPP residual at the configured split.
 */
enum PcStatus pc_dpp_residual(const struct PcConfig *handle, double *out_residual);

/**
 * Tree 2BSDE summary under the configured fixed control.
 */
enum PcStatus pc_bsde_summary(const struct PcConfig *handle,
                              double *out_y0,
                              double *out_min_dk,
                              double *out_identity_residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PATHCONTROL_H */
