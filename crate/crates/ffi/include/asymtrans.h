#ifndef ASYMTRANS_H
#define ASYMTRANS_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bytes of one 28x28 RGB image.
 */
#define AT_COLOR_IMAGE_LEN 2352

/**
 * Bytes of one 28x28 grayscale image.
 */
#define AT_GRAY_IMAGE_LEN 784

#define AT_DOMAIN_COLOR 0

#define AT_DOMAIN_GRAY 1

#define AT_SPLIT_TRAIN 0

#define AT_SPLIT_TEST 1

/**
 * Result code of every fallible call.
 */
typedef enum AtStatus {
  AT_STATUS_OK = 0,
  AT_STATUS_NULL_POINTER = 1,
  AT_STATUS_INVALID_ARGUMENT = 2,
  AT_STATUS_IO = 3,
  AT_STATUS_FORMAT = 4,
  AT_STATUS_BUFFER_TOO_SMALL = 5,
  AT_STATUS_RUNTIME = 6,
  AT_STATUS_PANIC = 7,
} AtStatus;

/**
 * Paired Colorized-MNIST dataset.
 */
typedef struct AtDataset AtDataset;

/**
 * Trained translation model.
 */
typedef struct AtModel AtModel;

/**
 * Color metrics of generated vs real color images.
 */
typedef struct AtMetrics {
  double recall_red;
  double recall_green;
  double recall_blue;
  double recall_avg;
  uint64_t unique_color_count;
  uint32_t n_bins;
} AtMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *at_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *at_version(void);

/**
 * Builds a dataset from MNIST IDX files; `count == 0` takes every image.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum AtStatus at_dataset_generate(const char *images_path,
                                  const char *labels_path,
                                  uint64_t seed,
                                  size_t count,
                                  uint32_t split,
                                  struct AtDataset **out);

/**
 * Reads a CMN1 file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AtStatus at_dataset_read(const char *path, struct AtDataset **out);

/**
 * Writes a CMN1 file.
 *
 * # Safety
 * `ds` must come from this library; `path` must be a NUL-terminated string.
 */
enum AtStatus at_dataset_write(const struct AtDataset *ds, const char *path);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or come from this library.
 */
size_t at_dataset_len(const struct AtDataset *ds);

/**
 * Seed the dataset's colors were drawn with; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or come from this library.
 */
uint64_t at_dataset_seed(const struct AtDataset *ds);

/**
 * Copies sample `index`'s RGB image (`AT_COLOR_IMAGE_LEN` bytes) into `buf`.
 *
 * # Safety
 * `ds` must come from this library; `buf` must hold `buf_len` bytes.
 */
enum AtStatus at_dataset_color_image(const struct AtDataset *ds,
                                     size_t index,
                                     uint8_t *buf,
                                     size_t buf_len);

/**
 * Copies sample `index`'s grayscale image (`AT_GRAY_IMAGE_LEN` bytes) into `buf`.
 *
 * # Safety
 * `ds` must come from this library; `buf` must hold `buf_len` bytes.
 */
enum AtStatus at_dataset_gray_image(const struct AtDataset *ds,
                                    size_t index,
                                    uint8_t *buf,
                                    size_t buf_len);

/**
 * Releases a dataset; null is ignored.
 *
 * # Safety
 * `ds` must be null or an unfreed handle from this library.
 */
void at_dataset_free(struct AtDataset *ds);

/**
 * Color Recall and Unique Color Count of `gen_count` generated images
 * against `real_count` real ones, both packed `AT_COLOR_IMAGE_LEN` bytes each.
 *
 * # Safety
 * Buffers must hold `count * AT_COLOR_IMAGE_LEN` bytes; `out` must be writable.
 */
enum AtStatus at_metrics_compute(const uint8_t *real,
                                 size_t real_count,
                                 const uint8_t *generated,
                                 size_t gen_count,
                                 uint32_t n_bins,
                                 struct AtMetrics *out);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AtStatus at_model_load(const char *path, struct AtModel **out);

/**
 * Translates `count` packed 28x28 images into `target_domain`
 * (`AT_DOMAIN_COLOR` or `AT_DOMAIN_GRAY`). Multi-modal targets use one
 * latent style per image drawn from `seed`; a gated uni-modal target uses
 * the zero style. `out` receives `count` images of the target's size.
 *
 * # Safety
 * `model` must come from this library; `input` must hold `count` source
 * images and `out` `out_len` bytes.
 */
enum AtStatus at_model_translate(const struct AtModel *model,
                                 const uint8_t *input,
                                 size_t count,
                                 uint32_t target_domain,
                                 uint64_t seed,
                                 uint8_t *out,
                                 size_t out_len);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must be null or an unfreed handle from this library.
 */
void at_model_free(struct AtModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASYMTRANS_H */
