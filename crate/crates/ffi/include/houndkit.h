/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef HOUNDKIT_H
#define HOUNDKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes; 1 to 6 mean what the same CLI exit codes mean.
 */
typedef enum HkStatus {
  HK_STATUS_OK = 0,
  HK_STATUS_GENERIC = 1,
  HK_STATUS_INVALID_ARGUMENT = 2,
  HK_STATUS_FORMAT = 3,
  HK_STATUS_HASH_MISMATCH = 4,
  HK_STATUS_MISSING_FILE = 5,
  HK_STATUS_CONFIG = 6,
  HK_STATUS_NULL_POINTER = 7,
  HK_STATUS_PANIC = 8,
} HkStatus;

typedef struct HkLocations HkLocations;

typedef struct HkModel HkModel;

typedef struct HkTrace HkTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `cap`) and returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t hk_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hk_version(void);

/**
 * Loads an `mdl-v1` model from its base name.
 *
 * # Safety
 * `base` must be a NUL-terminated string; `out` must be writable.
 */
enum HkStatus hk_model_load(const char *base, struct HkModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`hk_model_load`] not yet freed.
 */
void hk_model_free(struct HkModel *model);

/**
 * Window length N the model classifies, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hk_model_window_len(const struct HkModel *model);

/**
 * Average CP length recorded with the model, 0 if none.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double hk_model_mean_cp_len(const struct HkModel *model);

/**
 * Classifies one raw window of `len` samples (standardized internally);
 * writes the class (0 start, 1 spare, 2 noise) and, if `probs` is not null,
 * the three class probabilities.
 *
 * # Safety
 * `window` must point to `len` floats; `class_out` must be writable; `probs`
 * must be null or point to 3 writable doubles.
 */
enum HkStatus hk_classify_window(const struct HkModel *model,
                                 const float *window,
                                 size_t len,
                                 uint8_t *class_out,
                                 double *probs);

/**
 * Loads a `trc-v1` trace from its base name.
 *
 * # Safety
 * `base` must be a NUL-terminated string; `out` must be writable.
 */
enum HkStatus hk_trace_load(const char *base, struct HkTrace **out);

/**
 * Copies `len` samples into a new trace.
 *
 * # Safety
 * `samples` must point to `len` floats; `out` must be writable.
 */
enum HkStatus hk_trace_from_samples(const float *samples,
                                    size_t len,
                                    double sample_rate_hz,
                                    struct HkTrace **out);

/**
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t hk_trace_len(const struct HkTrace *trace);

/**
 * # Safety
 * `trace` must be null or a handle not yet freed.
 */
void hk_trace_free(struct HkTrace *trace);

/**
 * Sliding-window classification at `stride` followed by screening with
 * initial kernel `k0` (odd). `avg_cp <= 0` uses the length recorded with
 * the model.
 *
 * # Safety
 * `model` and `trace` must be live handles; `out` must be writable.
 */
enum HkStatus hk_locate(const struct HkModel *model,
                        const struct HkTrace *trace,
                        size_t stride,
                        size_t k0,
                        double avg_cp,
                        struct HkLocations **out);

/**
 * Number of located starts, 0 for a null handle.
 *
 * # Safety
 * `locs` must be null or a live handle.
 */
size_t hk_locations_len(const struct HkLocations *locs);

/**
 * Copies up to `cap` starts (sample indices) into `buf`; returns how many
 * were copied.
 *
 * # Safety
 * `locs` must be null or a live handle; `buf` must be null or point to `cap`
 * writable elements.
 */
size_t hk_locations_copy(const struct HkLocations *locs, size_t *buf, size_t cap);

/**
 * # Safety
 * `locs` must be null or a handle not yet freed.
 */
void hk_locations_free(struct HkLocations *locs);

/**
 * IoU of two equal-length intervals starting at `pred` and `gt`.
 *
 * # Safety
 * `out` must be writable.
 */
enum HkStatus hk_iou(size_t pred, size_t gt, size_t len, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOUNDKIT_H */
