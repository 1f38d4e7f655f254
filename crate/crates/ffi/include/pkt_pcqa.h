#ifndef PKT_PCQA_H
#define PKT_PCQA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PktStatus {
  PKT_STATUS_OK = 0,
  PKT_STATUS_NULL_ARGUMENT = 1,
  PKT_STATUS_INVALID_UTF8 = 2,
  PKT_STATUS_IO = 3,
  PKT_STATUS_MALFORMED_INPUT = 4,
  PKT_STATUS_INVALID_ARGUMENT = 5,
  PKT_STATUS_CLOUD_TOO_SMALL = 6,
  PKT_STATUS_CONFIG_MISMATCH = 7,
  PKT_STATUS_CONSTANT_VECTOR = 8,
  PKT_STATUS_BUFFER_TOO_SMALL = 9,
  PKT_STATUS_PANIC = 10,
} PktStatus;

/**
 * Point cloud handle.
 */
typedef struct PktCloud PktCloud;

/**
 * Key-cluster set handle.
 */
typedef struct PktKeyClusters PktKeyClusters;

/**
 * Loaded quality model handle.
 */
typedef struct PktModel PktModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *pkt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pkt_version(void);

/**
 * Reads an ASCII or binary little-endian PLY file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PktStatus pkt_cloud_load(const char *path, struct PktCloud **out);

/**
 * Builds a cloud from `n` xyz triples and `n` rgb triples.
 *
 * # Safety
 * `xyz` must hold `3 * n` doubles, `rgb` `3 * n` bytes; `out` must be writable.
 */
enum PktStatus pkt_cloud_from_arrays(const double *xyz,
                                     const uint8_t *rgb,
                                     size_t n,
                                     struct PktCloud **out);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t pkt_cloud_len(const struct PktCloud *cloud);

/**
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void pkt_cloud_free(struct PktCloud *cloud);

/**
 * Extracts `beta` key clusters of `k` points each with default settings.
 *
 * # Safety
 * `cloud` must be a live handle and `out` writable.
 */
enum PktStatus pkt_keyclusters_extract(const struct PktCloud *cloud,
                                       size_t beta,
                                       size_t k,
                                       struct PktKeyClusters **out);

/**
 * Writes `beta` and `k` of a key-cluster set.
 *
 * # Safety
 * `kc` must be a live handle; `beta` and `k` writable.
 */
enum PktStatus pkt_keyclusters_shape(const struct PktKeyClusters *kc, size_t *beta, size_t *k);

/**
 * Copies the `beta * k * 6` member features (local xyz, rgb in [0, 1]).
 *
 * # Safety
 * `kc` must be a live handle and `buf` hold `len` doubles.
 */
enum PktStatus pkt_keyclusters_copy(const struct PktKeyClusters *kc, double *buf, size_t len);

/**
 * Saves the set in the toolkit's key-cluster file format.
 *
 * # Safety
 * `kc` must be a live handle and `path` NUL-terminated.
 */
enum PktStatus pkt_keyclusters_save(const struct PktKeyClusters *kc, const char *path);

/**
 * # Safety
 * `kc` must be null or a handle not yet freed.
 */
void pkt_keyclusters_free(struct PktKeyClusters *kc);

/**
 * Loads a checkpoint written by `pkt-pcqa train`.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum PktStatus pkt_model_load(const char *path, struct PktModel **out);

/**
 * Predicted MOS on the model's scale and level (0 bad, 1 fair, 2 excellent).
 *
 * # Safety
 * `model` and `cloud` must be live handles; `mos` and `level` writable.
 */
enum PktStatus pkt_model_score(const struct PktModel *model,
                               const struct PktCloud *cloud,
                               double *mos,
                               int32_t *level);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void pkt_model_free(struct PktModel *model);

/**
 * Pearson correlation of two length-`n` arrays.
 *
 * # Safety
 * `x` and `y` must hold `n` doubles; `out` writable.
 */
enum PktStatus pkt_plcc(const double *x, const double *y, size_t n, double *out);

/**
 * Spearman rank correlation with average ranks for ties.
 *
 * # Safety
 * `x` and `y` must hold `n` doubles; `out` writable.
 */
enum PktStatus pkt_srocc(const double *x, const double *y, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PKT_PCQA_H */
