/* C interface to the pxfr attribute-transfer library. */

#ifndef PXFR_H
#define PXFR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Attribute kind a checkpoint predicts.
 */
typedef enum PxfrAttributeKind {
  PXFR_ATTRIBUTE_KIND_NORMALS = 0,
  PXFR_ATTRIBUTE_KIND_SEGMENTATION = 1,
  PXFR_ATTRIBUTE_KIND_COLOR = 2,
  PXFR_ATTRIBUTE_KIND_SCALAR = 3,
} PxfrAttributeKind;

/**
 * Result of every fallible API call.
 */
typedef enum PxfrStatus {
  PXFR_STATUS_OK = 0,
  /**
   * A pointer was null or an argument out of range.
   */
  PXFR_STATUS_INVALID_ARGUMENT = 1,
  PXFR_STATUS_IO = 2,
  /**
   * A file exists but cannot be decoded.
   */
  PXFR_STATUS_FORMAT = 3,
  /**
   * Buffer sizes do not match the declared image dimensions.
   */
  PXFR_STATUS_SHAPE = 4,
  /**
   * Inference produced a non-finite value.
   */
  PXFR_STATUS_NUMERIC = 5,
  /**
   * An unexpected internal failure; the library state is unchanged.
   */
  PXFR_STATUS_INTERNAL = 6,
} PxfrStatus;

/**
 * Opaque trained-model handle.
 */
typedef struct PxfrCheckpoint PxfrCheckpoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if the
 * last call succeeded. The pointer stays valid until the next failing
 * call on the same thread; do not free it.
 */
const char *pxfr_last_error(void);

/**
 * Loads a checkpoint file into a new handle stored in `*out`. On any
 * failure `*out` is left untouched.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum PxfrStatus pxfr_checkpoint_load(const char *path, struct PxfrCheckpoint **out);

/**
 * Frees a handle from [`pxfr_checkpoint_load`]; null is a no-op.
 *
 * # Safety
 * `handle` must be a pointer returned by this library, freed only once.
 */
void pxfr_checkpoint_free(struct PxfrCheckpoint *handle);

/**
 * Attribute kind of the checkpoint; `Normals` if `handle` is null.
 *
 * # Safety
 * `handle` must be a live pointer from [`pxfr_checkpoint_load`] or null.
 */
enum PxfrAttributeKind pxfr_checkpoint_kind(const struct PxfrCheckpoint *handle);

/**
 * Channels per pixel in prediction buffers; 0 if `handle` is null.
 *
 * # Safety
 * `handle` must be a live pointer from [`pxfr_checkpoint_load`] or null.
 */
uint32_t pxfr_checkpoint_attribute_dims(const struct PxfrCheckpoint *handle);

/**
 * Predicts the attribute map for one guidance image.
 *
 * `guidance` holds `3 * height * width` planar floats in [0,1]; `out`
 * receives `dims * height * width` floats where `dims` comes from
 * [`pxfr_checkpoint_attribute_dims`]. `guidance_len` and `out_len` are
 * element counts and must match exactly.
 *
 * # Safety
 * `handle` must be live, and both buffers valid for their stated lengths.
 */
enum PxfrStatus pxfr_infer(const struct PxfrCheckpoint *handle,
                           const float *guidance,
                           uint32_t height,
                           uint32_t width,
                           size_t guidance_len,
                           float *out,
                           size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PXFR_H */
