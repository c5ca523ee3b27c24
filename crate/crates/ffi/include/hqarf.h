#ifndef HQARF_H
#define HQARF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HqarfStatus {
  HQARF_STATUS_OK = 0,
  HQARF_STATUS_NULL_ARGUMENT = -1,
  HQARF_STATUS_IO = -2,
  HQARF_STATUS_FORMAT = -3,
  HQARF_STATUS_STATE = -4,
  HQARF_STATUS_INTEGRITY = -5,
  HQARF_STATUS_CORRUPTION = -6,
  HQARF_STATUS_CONFIG = -7,
  HQARF_STATUS_DIMENSION = -8,
  HQARF_STATUS_BUFFER_TOO_SMALL = -9,
  HQARF_STATUS_NUMERICAL = -10,
  HQARF_STATUS_PANIC = -11,
  HQARF_STATUS_OTHER = -12,
} HqarfStatus;

/**
 * Opaque handle to a loaded model stack.
 */
typedef struct HqarfModel HqarfModel;

typedef struct HqarfRateReport {
  uint32_t level;
  uint64_t width;
  uint64_t payload_bits;
  double source_bits;
  /**
   * Nominal ratio, rounded to two decimals per level.
   */
  double cr;
  double cr_exact;
  /**
   * `1 / cr`.
   */
  double r;
} HqarfRateReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a stack checkpoint from a NUL-terminated path.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum HqarfStatus hqarf_model_load(const char *path, struct HqarfModel **out);

/**
 * Loads a stack checkpoint from memory.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be valid.
 */
enum HqarfStatus hqarf_model_load_bytes(const uint8_t *data, size_t len, struct HqarfModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from a load call and not be used afterwards.
 */
void hqarf_model_free(struct HqarfModel *model);

/**
 * Frame length `p` the model expects, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hqarf_model_frame_len(const struct HqarfModel *model);

/**
 * Number of levels, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hqarf_model_depth(const struct HqarfModel *model);

/**
 * Writes the 16-byte model id carried in every blob header.
 *
 * # Safety
 * `out` must have room for 16 bytes.
 */
enum HqarfStatus hqarf_model_id(const struct HqarfModel *model, uint8_t *out);

/**
 * Size in bytes of a blob compressed at `level`.
 *
 * # Safety
 * `model` must be a live handle and `out_len` valid.
 */
enum HqarfStatus hqarf_blob_len(const struct HqarfModel *model, uint32_t level, size_t *out_len);

/**
 * Compresses one `[2, p]` frame given as `2·p` floats (in-phase samples,
 * then quadrature) into `out`. `out_len` receives the blob size, also when
 * the buffer is too small.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum HqarfStatus hqarf_compress(const struct HqarfModel *model,
                                const float *iq,
                                size_t iq_len,
                                uint32_t level,
                                uint8_t *out,
                                size_t out_cap,
                                size_t *out_len);

/**
 * Decodes a blob into `2·p` floats. `out_len` receives the float count.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum HqarfStatus hqarf_decompress(const struct HqarfModel *model,
                                  const uint8_t *blob,
                                  size_t blob_len,
                                  float *out,
                                  size_t out_cap,
                                  size_t *out_len);

/**
 * Rate figures for `level` at frame length `p` and codebook size `n_c`.
 *
 * # Safety
 * `out` must be valid.
 */
enum HqarfStatus hqarf_compression_ratio(uint32_t level,
                                         size_t p,
                                         size_t n_c,
                                         struct HqarfRateReport *out);

/**
 * Packs `count` indices at `bits` each, MSB first.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum HqarfStatus hqarf_pack_indices(const uint32_t *indices,
                                    size_t count,
                                    uint32_t bits,
                                    uint8_t *out,
                                    size_t out_cap,
                                    size_t *out_len);

/**
 * Unpacks `count` indices of `bits` each from exactly the bytes they need.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum HqarfStatus hqarf_unpack_indices(const uint8_t *bytes,
                                      size_t len,
                                      size_t count,
                                      uint32_t bits,
                                      uint32_t *out,
                                      size_t out_cap);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *hqarf_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *hqarf_status_name(enum HqarfStatus status);

/**
 * Library version as a static C string.
 */
const char *hqarf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HQARF_H */
