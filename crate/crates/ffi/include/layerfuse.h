#ifndef LAYERFUSE_H
#define LAYERFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum LfStatus {
  LF_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  LF_STATUS_NULL_POINTER = 1,
  /**
   * An argument was malformed (bad UTF-8, unknown name, wrong length).
   */
  LF_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The operating system reported an I/O failure.
   */
  LF_STATUS_IO = 3,
  /**
   * A file was not a valid layerfuse file (magic, version, truncation).
   */
  LF_STATUS_FORMAT = 4,
  /**
   * Inputs were readable but inconsistent (shapes, manifest, labels).
   */
  LF_STATUS_VALIDATION = 5,
  /**
   * A value was NaN/infinite or an arithmetic result overflowed.
   */
  LF_STATUS_NUMERIC = 6,
  /**
   * The output buffer is too small; the required length was reported.
   */
  LF_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * An internal panic was caught.
   */
  LF_STATUS_PANIC = 8,
} LfStatus;

/**
 * Opaque embedding matrix handle.
 */
typedef struct LfEmbedding LfEmbedding;

/**
 * Opaque manifest handle.
 */
typedef struct LfManifest LfManifest;

/**
 * Opaque trained-classifier handle.
 */
typedef struct LfModel LfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the calling thread's most recent failure, or NULL.
 */
const char *lf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lf_version(void);

/**
 * Copies `n_samples * dim` floats into a new embedding matrix.
 *
 * # Safety
 * `data` must point to `n_samples * dim` floats; `out` must be writable.
 */
enum LfStatus lf_embedding_new(size_t n_samples,
                               size_t dim,
                               const float *data,
                               struct LfEmbedding **out);

/**
 * Reads an embedding file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LfStatus lf_embedding_read(const char *path, struct LfEmbedding **out);

/**
 * Writes an embedding file atomically.
 *
 * # Safety
 * `emb` must be a live handle; `path` a NUL-terminated string.
 */
enum LfStatus lf_embedding_write(const struct LfEmbedding *emb, const char *path);

/**
 * Reports the matrix shape.
 *
 * # Safety
 * `emb` must be a live handle; `n_samples` and `dim` must be writable.
 */
enum LfStatus lf_embedding_shape(const struct LfEmbedding *emb, size_t *n_samples, size_t *dim);

/**
 * Row-major values, valid for the lifetime of the handle. NULL if `emb` is.
 *
 * # Safety
 * `emb` must be NULL or a live handle.
 */
const float *lf_embedding_data(const struct LfEmbedding *emb);

/**
 * # Safety
 * `emb` must be NULL or a handle not yet freed.
 */
void lf_embedding_free(struct LfEmbedding *emb);

/**
 * Bytes needed for `n_samples` rows of the concatenated `dims` as f32.
 *
 * # Safety
 * `dims` must point to `n_dims` values; `out` must be writable.
 */
enum LfStatus lf_estimate_memory(uint64_t n_samples,
                                 const size_t *dims,
                                 size_t n_dims,
                                 uint64_t *out);

/**
 * Loads and validates a manifest.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LfStatus lf_manifest_load(const char *path, struct LfManifest **out);

/**
 * Deepest layer recorded for `model`.
 *
 * # Safety
 * `manifest` must be a live handle, `model` a NUL-terminated string and
 * `out` writable.
 */
enum LfStatus lf_manifest_max_layer(const struct LfManifest *manifest,
                                    const char *model,
                                    uint32_t *out);

/**
 * Loads one (split, model, layer) matrix. `split` is 0 for train, 1 for
 * test.
 *
 * # Safety
 * `manifest` must be a live handle, `model` a NUL-terminated string and
 * `out` writable.
 */
enum LfStatus lf_manifest_load_embedding(const struct LfManifest *manifest,
                                         uint32_t split,
                                         const char *model,
                                         uint32_t layer,
                                         struct LfEmbedding **out);

/**
 * # Safety
 * `manifest` must be NULL or a handle not yet freed.
 */
void lf_manifest_free(struct LfManifest *manifest);

/**
 * Loads a classifier checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LfStatus lf_model_load(const char *path, struct LfModel **out);

/**
 * Number of output classes, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lf_model_n_classes(const struct LfModel *model);

/**
 * Number of embeddings the model fuses per sample, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lf_model_n_inputs(const struct LfModel *model);

/**
 * Width of input `index`.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum LfStatus lf_model_input_dim(const struct LfModel *model, size_t index, size_t *out);

/**
 * Predicts the class of one sample. `inputs[i]` points to
 * `lf_model_input_dim(model, i)` floats.
 *
 * # Safety
 * `model` must be a live handle, `inputs` must hold `n_inputs` pointers to
 * correctly sized arrays, and `out_class` must be writable.
 */
enum LfStatus lf_model_predict(const struct LfModel *model,
                               const float *const *inputs,
                               size_t n_inputs,
                               size_t *out_class);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void lf_model_free(struct LfModel *model);

/**
 * Applies a parameter-free fusion operator to two already-aligned vectors
 * of length `dim`. `method` is one of `concat`, `sum`, `hadamard`,
 * `multiply`, `quaternion` or `all`.
 *
 * The result is written to `out` (capacity `out_cap`) and its length to
 * `out_len`. If the buffer is too small, `out_len` receives the required
 * length and `LF_STATUS_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * `a` and `b` must point to `dim` floats, `method` must be a NUL-terminated
 * string, `out` must have room for `out_cap` floats and `out_len` must be
 * writable.
 */
enum LfStatus lf_fuse_pair(const char *method,
                           const float *a,
                           const float *b,
                           size_t dim,
                           float *out,
                           size_t out_cap,
                           size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAYERFUSE_H */
