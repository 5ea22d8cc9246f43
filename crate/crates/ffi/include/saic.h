/* Generated by cbindgen. Do not edit. */

#ifndef SAIC_H
#define SAIC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. `Ok` is zero.
 */
typedef enum SaicStatus {
  SAIC_STATUS_OK = 0,
  SAIC_STATUS_NULL_POINTER = 1,
  SAIC_STATUS_INVALID_ARGUMENT = 2,
  SAIC_STATUS_IO = 3,
  SAIC_STATUS_PARSE = 4,
  SAIC_STATUS_NO_MATCH = 5,
  SAIC_STATUS_EMPTY_BANK = 6,
  SAIC_STATUS_NUMERICAL = 7,
  SAIC_STATUS_PANIC = 8,
} SaicStatus;

/**
 * Cell type codes accepted by [`saic_bank_select_candidate`].
 */
typedef enum SaicCellType {
  SAIC_CELL_TYPE_SINGLE_CELL = 0,
  SAIC_CELL_TYPE_CLUMPS = 1,
} SaicCellType;

/**
 * Opaque cell bank.
 */
typedef struct SaicBank SaicBank;

/**
 * Opaque mean/covariance summary of an embedding set.
 */
typedef struct SaicGaussian SaicGaussian;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *saic_last_error(void);

/**
 * Static name of a status code.
 */
const char *saic_status_name(enum SaicStatus status);

/**
 * Library version as a static string.
 */
const char *saic_version(void);

/**
 * Opens a bank directory written by `saic build-bank`.
 *
 * # Safety
 * `dir` must be a nul-terminated string; `out` must be writable.
 */
enum SaicStatus saic_bank_open(const char *dir, struct SaicBank **out);

/**
 * # Safety
 * `bank` must come from [`saic_bank_open`] and not be used afterwards. Null is ignored.
 */
void saic_bank_free(struct SaicBank *bank);

/**
 * Number of records; 0 for a null handle.
 *
 * # Safety
 * `bank` must be null or a live handle.
 */
size_t saic_bank_len(const struct SaicBank *bank);

/**
 * Embedding length of the bank, or 0 if records carry no embeddings.
 *
 * # Safety
 * `bank` must be null or a live handle.
 */
size_t saic_bank_embed_dim(const struct SaicBank *bank);

/**
 * Closest-area record of the given category and type; ties go to the lowest
 * id. `exclude_source` may be null.
 *
 * # Safety
 * Pointers must be valid; strings nul-terminated.
 */
enum SaicStatus saic_bank_select_candidate(const struct SaicBank *bank,
                                           const char *category,
                                           enum SaicCellType cell_type,
                                           uint64_t area,
                                           const char *exclude_source,
                                           uint64_t *out_id);

/**
 * Most cosine-similar record to `embedding`; ties go to the lowest id.
 * `category` may be null to search the whole bank.
 *
 * # Safety
 * `embedding` must point to `len` doubles; other pointers valid.
 */
enum SaicStatus saic_bank_select_reference(const struct SaicBank *bank,
                                           const double *embedding,
                                           size_t len,
                                           const char *category,
                                           uint64_t *out_id);

/**
 * Cosine similarity of two vectors of length `len`.
 *
 * # Safety
 * `u` and `v` must point to `len` doubles; `out` writable.
 */
enum SaicStatus saic_cosine_similarity(const double *u, const double *v, size_t len, double *out);

/**
 * Sobel gradient magnitude of an interleaved 8-bit image with 1 or 3
 * channels. `out` receives `width * height * channels` doubles.
 *
 * # Safety
 * `pixels` and `out` must each hold `width * height * channels` elements.
 */
enum SaicStatus saic_highpass(const uint8_t *pixels,
                              uint32_t width,
                              uint32_t height,
                              uint8_t channels,
                              double *out);

/**
 * Element-wise `alpha * ht + (1 - alpha) * hr` over `len` samples.
 *
 * # Safety
 * `ht`, `hr` and `out` must each hold `len` doubles.
 */
enum SaicStatus saic_blend_hf(const double *ht,
                              const double *hr,
                              size_t len,
                              double alpha,
                              double *out);

/**
 * Mean and unbiased covariance of `count` row-major samples of length `dim`.
 *
 * # Safety
 * `samples` must hold `count * dim` doubles; `out` writable.
 */
enum SaicStatus saic_gaussian_new(const double *samples,
                                  size_t count,
                                  size_t dim,
                                  struct SaicGaussian **out);

/**
 * # Safety
 * `g` must come from [`saic_gaussian_new`] and not be used afterwards. Null is ignored.
 */
void saic_gaussian_free(struct SaicGaussian *g);

/**
 * Frechet distance between two summaries of the same dimension.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` writable.
 */
enum SaicStatus saic_frechet_distance(const struct SaicGaussian *a,
                                      const struct SaicGaussian *b,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAIC_H */
