/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SCOREVC_H
#define SCOREVC_H

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum SvcStatus {
  SVC_STATUS_OK = 0,
  // A required pointer argument was null.
  SVC_STATUS_NULL_POINTER = 1,
  // An argument or configuration value was rejected.
  SVC_STATUS_INVALID_ARGUMENT = 2,
  // A file was malformed.
  SVC_STATUS_FORMAT = 3,
  // A file could not be read or written.
  SVC_STATUS_IO = 4,
  // Training or sampling produced non-finite values.
  SVC_STATUS_NUMERICAL = 5,
  // An internal panic was caught at the boundary.
  SVC_STATUS_PANIC = 6,
} SvcStatus;

// One utterance of features.
typedef struct SvcFeatures SvcFeatures;

// Trained score network plus the noise schedule it was trained with.
typedef struct SvcModel SvcModel;

// Per-speaker normalization statistics.
typedef struct SvcStats SvcStats;

// Langevin settings for [`svc_convert`].
typedef struct SvcLangevinParams {
  double epsilon;
  uintptr_t steps_per_level;
  // One-based noise level the sweep starts at.
  uintptr_t start_level;
  // Nonzero adds Gaussian noise to every update.
  int32_t noisy;
  uint64_t seed;
} SvcLangevinParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *svc_version(void);

// Copies the calling thread's last error message into `buf` (truncated and
// always NUL-terminated when `len > 0`). Returns the full message length in
// bytes, excluding the terminator.
//
// # Safety
// `buf` must be null or valid for `len` writable bytes.
uintptr_t svc_last_error(char *buf, uintptr_t len);

// Defaults for conversion: epsilon 1e-5, 120 steps per level, start at
// level 4, noiseless, seed 0.
//
// # Safety
// `out` must be null or point to writable memory for one struct.
enum SvcStatus svc_langevin_defaults(struct SvcLangevinParams *out);

// Loads a checkpoint and pairs it with the geometric schedule from
// `sigma_first` to `sigma_last`; the level count comes from the checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SvcStatus svc_model_load(const char *path,
                              double sigma_first,
                              double sigma_last,
                              struct SvcModel **out);

// # Safety
// `model` must be null or a handle from [`svc_model_load`] not yet freed.
void svc_model_free(struct SvcModel *model);

// Feature dimension, speaker count and noise-level count of a model.
//
// # Safety
// `model` must be a live handle; each output pointer may be null.
enum SvcStatus svc_model_info(const struct SvcModel *model,
                              uintptr_t *feature_dim,
                              uintptr_t *speakers,
                              uintptr_t *levels);

// Builds a feature sequence from row-major `dim x frames` MCCs and a
// log-F0 track of `frames` values where NaN marks unvoiced frames. The
// aperiodicity payload is empty.
//
// # Safety
// `mcc` must hold `dim * frames` doubles and `log_f0` `frames` doubles.
enum SvcStatus svc_features_new(const double *mcc,
                                const double *log_f0,
                                uintptr_t dim,
                                uintptr_t frames,
                                struct SvcFeatures **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SvcStatus svc_features_read(const char *path, struct SvcFeatures **out);

// # Safety
// `features` must be a live handle and `path` a NUL-terminated string.
enum SvcStatus svc_features_write(const struct SvcFeatures *features, const char *path);

// # Safety
// `features` must be null or a live handle.
void svc_features_free(struct SvcFeatures *features);

// # Safety
// `features` must be a live handle; output pointers may be null.
enum SvcStatus svc_features_shape(const struct SvcFeatures *features,
                                  uintptr_t *dim,
                                  uintptr_t *frames);

// Copies the row-major MCC matrix into `out`, which must hold exactly
// `dim * frames` doubles (`len`).
//
// # Safety
// `out` must be valid for `len` writable doubles.
enum SvcStatus svc_features_mcc(const struct SvcFeatures *features, double *out, uintptr_t len);

// Statistics over `count` feature sequences.
//
// # Safety
// `sequences` must point to `count` live handles.
enum SvcStatus svc_stats_compute(const struct SvcFeatures *const *sequences,
                                 uintptr_t count,
                                 struct SvcStats **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SvcStatus svc_stats_read(const char *path, struct SvcStats **out);

// # Safety
// `stats` must be a live handle and `path` a NUL-terminated string.
enum SvcStatus svc_stats_write(const struct SvcStats *stats, const char *path);

// # Safety
// `stats` must be null or a live handle.
void svc_stats_free(struct SvcStats *stats);

// Converts `input` toward zero-based speaker `target`: Langevin refinement
// of the normalized MCCs, moment matching to `target_stats`, log-F0
// transform, aperiodicity passthrough. `params` may be null for defaults.
//
// # Safety
// All handles must be live; `params` must be null or readable; `out`
// must be writable.
enum SvcStatus svc_convert(const struct SvcModel *model,
                           const struct SvcFeatures *input,
                           uintptr_t target,
                           const struct SvcStats *source_stats,
                           const struct SvcStats *target_stats,
                           const struct SvcLangevinParams *params,
                           struct SvcFeatures **out);

// DTW-aligned mel-cepstral distortion in dB between two sequences.
//
// # Safety
// Both handles must be live; `out` must be writable.
enum SvcStatus svc_mcd(const struct SvcFeatures *converted,
                       const struct SvcFeatures *reference,
                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCOREVC_H */
