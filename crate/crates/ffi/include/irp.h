#ifndef IRP_H
#define IRP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IrpStatus {
  IRP_STATUS_OK = 0,
  IRP_STATUS_NULL_POINTER = 1,
  IRP_STATUS_INVALID_UTF8 = 2,
  IRP_STATUS_IO = 3,
  IRP_STATUS_CHECKPOINT = 4,
  IRP_STATUS_INVALID_REQUEST = 5,
  IRP_STATUS_INTERNAL = 6,
  IRP_STATUS_PANIC = 7,
} IrpStatus;

/**
 * Loaded model. Opaque to C.
 */
typedef struct IrpModel IrpModel;

typedef struct IrpPrediction {
  /**
   * P(image-seeking intent) in (0, 1).
   */
  double probability;
  /**
   * 1 iff `probability >= threshold`.
   */
  uint8_t decision;
  double threshold;
} IrpPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a checkpoint. `vocab_path` may be NULL to use the vocabulary path
 * recorded in the checkpoint. On success `*out` owns a new handle that
 * must be released with `irp_model_free`.
 *
 * # Safety
 * `ckpt_path` must be a NUL-terminated string, `vocab_path` NULL or a
 * NUL-terminated string, and `out` a valid pointer.
 */
enum IrpStatus irp_model_load(const char *ckpt_path, const char *vocab_path, struct IrpModel **out);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle from `irp_model_load` that has not been
 * freed.
 */
void irp_model_free(struct IrpModel *model);

/**
 * Scores one JSON record (`{"query": {...}, "products": [...]}`; any
 * `label` is ignored) at the model's calibrated threshold.
 *
 * # Safety
 * `model` must be a live handle, `json` a NUL-terminated string and `out`
 * a valid pointer.
 */
enum IrpStatus irp_model_predict_json(const struct IrpModel *model,
                                      const char *json,
                                      struct IrpPrediction *out);

/**
 * The calibrated decision threshold, or NaN for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
double irp_model_threshold(const struct IrpModel *model);

/**
 * Identifier derived from the checkpoint bytes. Owned by the handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
const char *irp_model_version(const struct IrpModel *model);

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *irp_last_error(void);

/**
 * Static, NUL-terminated library version.
 */
const char *irp_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IRP_H */
