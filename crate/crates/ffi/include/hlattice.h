#ifndef HLATTICE_H
#define HLATTICE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HlStatus {
  HL_STATUS_OK = 0,
  HL_STATUS_NULL_POINTER = 1,
  HL_STATUS_INVALID_UTF8 = 2,
  HL_STATUS_INVALID_INPUT = 3,
  HL_STATUS_DIMENSION_MISMATCH = 4,
  HL_STATUS_HYPOTHESIS_VIOLATED = 5,
  HL_STATUS_INCOMPATIBLE_GEOMETRY = 6,
  HL_STATUS_SINGULAR = 7,
  HL_STATUS_CERTIFICATE_REFUSED = 8,
  HL_STATUS_INSUFFICIENT_SEPARATION = 9,
  HL_STATUS_MOMENT_BLOW_UP = 10,
  HL_STATUS_CONFIG = 11,
  HL_STATUS_IO = 12,
  HL_STATUS_BUFFER_TOO_SMALL = 13,
  HL_STATUS_BLOW_UP = 14,
  HL_STATUS_PANIC = 15,
} HlStatus;

/**
 * Aggregate outcome of [`hl_run`].
 */
typedef enum HlOutcome {
  HL_OUTCOME_PASS = 0,
  HL_OUTCOME_FAIL = 1,
  HL_OUTCOME_INCONCLUSIVE = 2,
} HlOutcome;

/**
 * Validated experiment configuration.
 */
typedef struct HlConfig HlConfig;

/**
 * One Euler–Maruyama replica driven by counter-based noise.
 */
typedef struct HlStepper HlStepper;

/**
 * Box system `Π_n` built from a configuration.
 */
typedef struct HlSystem HlSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL terminated)
 * and stores the full message length, without the terminator, in `len`.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes or be null with `cap == 0`.
 */
enum HlStatus hl_last_error(char *buf, uintptr_t cap, uintptr_t *len);

/**
 * Static, NUL-terminated version string.
 */
const char *hl_version(void);

/**
 * Parses and validates a JSON configuration.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum HlStatus hl_config_from_json(const char *json, struct HlConfig **out);

/**
 * Loads and validates a JSON configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HlStatus hl_config_load(const char *path, struct HlConfig **out);

/**
 * Writes the 64-character hex config hash plus a NUL into `buf`.
 *
 * # Safety
 * `cfg` must come from this library; `buf` must hold `cap` bytes.
 */
enum HlStatus hl_config_hash(const struct HlConfig *cfg, char *buf, uintptr_t cap);

/**
 * # Safety
 * `cfg` must come from this library and not be used afterwards.
 */
void hl_config_free(struct HlConfig *cfg);

/**
 * Builds the system on box `Π_n`.
 *
 * # Safety
 * `cfg` must come from this library; `out` must be writable.
 */
enum HlStatus hl_system_new(const struct HlConfig *cfg, uintptr_t n, struct HlSystem **out);

/**
 * Stores the number of sites and the state length (sites × site dimension).
 *
 * # Safety
 * `sys` must come from this library; the out pointers must be writable.
 */
enum HlStatus hl_system_shape(const struct HlSystem *sys, uintptr_t *sites, uintptr_t *state_len);

/**
 * # Safety
 * `sys` must come from this library and not be used afterwards. Steppers
 * created from it stay valid.
 */
void hl_system_free(struct HlSystem *sys);

/**
 * Starts replica `replica` of the noise stream `seed` with step `h` from
 * `init` (`len` must equal the state length).
 *
 * # Safety
 * `sys` must come from this library; `init` must hold `len` doubles.
 */
enum HlStatus hl_stepper_new(const struct HlSystem *sys,
                             const double *init,
                             uintptr_t len,
                             uint64_t seed,
                             uint64_t replica,
                             double h,
                             struct HlStepper **out);

/**
 * Advances `steps` Euler–Maruyama steps. Returns `BlowUp` once the state
 * leaves the finite range; the stepper is then frozen.
 *
 * # Safety
 * `st` must come from this library.
 */
enum HlStatus hl_stepper_advance(struct HlStepper *st, uint64_t steps);

/**
 * Copies the current state into `buf` (`cap` doubles) and the time into `time`.
 *
 * # Safety
 * `st` must come from this library; `buf` must hold `cap` doubles; `time`
 * may be null.
 */
enum HlStatus hl_stepper_state(const struct HlStepper *st,
                               double *buf,
                               uintptr_t cap,
                               double *time);

/**
 * # Safety
 * `st` must come from this library and not be used afterwards.
 */
void hl_stepper_free(struct HlStepper *st);

/**
 * Solves the single-site Heisenberg reachability problem from `from` to
 * `to` in time `t` and stores the verified endpoint error.
 *
 * # Safety
 * `from` and `to` must hold three doubles; `error` must be writable.
 */
enum HlStatus hl_control_solve(const double *from,
                               const double *to,
                               double t,
                               double lambda,
                               double *error);

/**
 * Runs every configured suite. `seed` overrides the master seed when not
 * null; `out_dir` receives the artifacts when not null.
 *
 * # Safety
 * `cfg` must come from this library; strings must be NUL terminated.
 */
enum HlStatus hl_run(const struct HlConfig *cfg,
                     const uint64_t *seed,
                     uintptr_t workers,
                     const char *out_dir,
                     enum HlOutcome *outcome);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HLATTICE_H */
