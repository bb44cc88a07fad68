/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef MACAS_H
#define MACAS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MacasStatus {
  MACAS_STATUS_OK = 0,
  MACAS_STATUS_NULL_POINTER = 1,
  MACAS_STATUS_INVALID_UTF8 = 2,
  MACAS_STATUS_IO = 3,
  MACAS_STATUS_CHECKPOINT = 4,
  MACAS_STATUS_INVALID_ARGUMENT = 5,
  MACAS_STATUS_BUFFER_TOO_SMALL = 6,
  MACAS_STATUS_INTERNAL = 7,
} MacasStatus;

/*
 A loaded checkpoint.
 */
typedef struct MacasModel MacasModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *macas_version(void);

/*
 Message of the last failure on this thread, or NULL. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *macas_last_error_message(void);

/*
 Loads a checkpoint file into a new handle written to `*out`.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MacasStatus macas_model_load(const char *path, struct MacasModel **out);

/*
 Releases a handle. NULL is ignored.

 # Safety
 `model` must come from [`macas_model_load`] and not be used afterwards.
 */
void macas_model_free(struct MacasModel *model);

/*
 # Safety
 `model` must be a live handle and `out` a valid pointer.
 */
enum MacasStatus macas_model_num_classes(const struct MacasModel *model, size_t *out);

/*
 Copies the name of class `index` into `buf` as a NUL-terminated
 string. `*needed`, when non-NULL, receives the size including the
 terminator; a short buffer yields `BUFFER_TOO_SMALL`.

 # Safety
 `buf` must hold `buf_len` bytes (or be NULL with `buf_len` 0).
 */
enum MacasStatus macas_model_class_name(const struct MacasModel *model,
                                        size_t index,
                                        char *buf,
                                        size_t buf_len,
                                        size_t *needed);

/*
 Class distribution for `text`, written to `probs[0..num_classes]`;
 the argmax goes to `*predicted` when non-NULL.

 # Safety
 `text` must be NUL-terminated and `probs` hold `probs_len` doubles.
 */
enum MacasStatus macas_model_predict(const struct MacasModel *model,
                                     const char *text,
                                     double *probs,
                                     size_t probs_len,
                                     size_t *predicted);

/*
 Support-weighted F1 of `n` predictions over `num_classes` classes.

 # Safety
 `y_true` and `y_pred` must each hold `n` entries.
 */
enum MacasStatus macas_weighted_f1(const size_t *y_true,
                                   const size_t *y_pred,
                                   size_t n,
                                   size_t num_classes,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MACAS_H */
