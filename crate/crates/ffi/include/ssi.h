#ifndef SSI_H
#define SSI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum SsiStatus {
  SSI_STATUS_OK = 0,
  SSI_STATUS_NULL_POINTER = 1,
  SSI_STATUS_INVALID_PARAMETER = 2,
  SSI_STATUS_INVALID_STATE = 3,
  SSI_STATUS_NUMERIC_FAILURE = 4,
  SSI_STATUS_IO = 5,
  SSI_STATUS_FORMAT = 6,
  SSI_STATUS_PANIC = 7,
} SsiStatus;

// Grayscale image with values nominally in `[0, 1]`.
typedef struct SsiImage SsiImage;

// Trained network parameters.
typedef struct SsiModel SsiModel;

// Gaussian point spread function.
typedef struct SsiPsf {
  double sigma;
  uint32_t radius;
} SsiPsf;

typedef struct SsiNoise {
  double alpha;
  double sigma;
  double pepper;
  uint32_t bits;
  uint64_t seed;
} SsiNoise;

typedef struct SsiTrainOptions {
  uint32_t epochs;
  uint32_t batches_per_epoch;
  uint32_t depth;
  uint32_t base_channels;
  double learning_rate;
  double l1;
  double l2;
  uint64_t seed;
  // Nonzero trains on the unmasked full-image loss.
  uint8_t no_mask;
} SsiTrainOptions;

typedef struct SsiMetrics {
  double psnr;
  double ssim;
  double mi;
  double smi;
} SsiMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or an empty string.
// The pointer stays valid until the next call into this library on the same thread.
const char *ssi_last_error(void);

// Copies `width * height` row-major values from `data` into a new image.
//
// # Safety
// `data` must point to `width * height` readable doubles; `out` must be writable.
enum SsiStatus ssi_image_new(size_t width,
                             size_t height,
                             const double *data,
                             struct SsiImage **out);

// # Safety
// `image` must be null or a handle from this library that has not been freed.
void ssi_image_free(struct SsiImage *image);

// # Safety
// `image` must be a live handle; `width` and `height` must be writable.
enum SsiStatus ssi_image_shape(const struct SsiImage *image, size_t *width, size_t *height);

// Copies the pixels row-major into `buffer`, which must hold exactly `len` doubles.
//
// # Safety
// `image` must be a live handle; `buffer` must point to `len` writable doubles.
enum SsiStatus ssi_image_copy_data(const struct SsiImage *image, double *buffer, size_t len);

// Reads a PNG, PGM or SSIF file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SsiStatus ssi_image_read(const char *path, struct SsiImage **out);

// Writes the image; `bits` is 8 or 16 for PNG and PGM and ignored for SSIF.
//
// # Safety
// `image` must be a live handle; `path` must be a NUL-terminated string.
enum SsiStatus ssi_image_write(const struct SsiImage *image, const char *path, uint32_t bits);

// Blurs `clean` with the PSF (reflect boundary) and applies the noise model.
//
// # Safety
// Pointers must be valid; `out` must be writable.
enum SsiStatus ssi_degrade(const struct SsiImage *clean,
                           const struct SsiPsf *psf,
                           const struct SsiNoise *noise,
                           struct SsiImage **out);

// Library defaults for [`ssi_train`].
struct SsiTrainOptions ssi_train_options_default(void);

// Fits a network to the single observation `observed` blurred by `psf`.
//
// # Safety
// Pointers must be valid; `out` must be writable.
enum SsiStatus ssi_train(const struct SsiImage *observed,
                         const struct SsiPsf *psf,
                         const struct SsiTrainOptions *options,
                         struct SsiModel **out);

// Deconvolved estimate of `observed`, clamped to `[0, 1]`.
//
// # Safety
// Pointers must be valid; `out` must be writable.
enum SsiStatus ssi_infer(const struct SsiModel *model,
                         const struct SsiImage *observed,
                         struct SsiImage **out);

// # Safety
// `model` must be null or a handle from this library that has not been freed.
void ssi_model_free(struct SsiModel *model);

// # Safety
// `model` must be a live handle; `path` must be a NUL-terminated string.
enum SsiStatus ssi_model_save(const struct SsiModel *model, const char *path);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum SsiStatus ssi_model_load(const char *path, struct SsiModel **out);

// Richardson-Lucy deconvolution (reflect boundary).
//
// # Safety
// Pointers must be valid; `out` must be writable.
enum SsiStatus ssi_lucy_richardson(const struct SsiImage *observed,
                                   const struct SsiPsf *psf,
                                   uint32_t iters,
                                   struct SsiImage **out);

// TV-regularized deconvolution by primal-dual iterations (reflect boundary).
//
// # Safety
// Pointers must be valid; `out` must be writable.
enum SsiStatus ssi_tv_primal_dual(const struct SsiImage *observed,
                                  const struct SsiPsf *psf,
                                  double lambda,
                                  uint32_t iters,
                                  double eps_tv,
                                  struct SsiImage **out);

// Smoothed-TV deconvolution by nonlinear conjugate gradients (reflect
// boundary). `line_search_failed` may be null.
//
// # Safety
// Pointers must be valid; `out` must be writable.
enum SsiStatus ssi_tv_conjugate_gradient(const struct SsiImage *observed,
                                         const struct SsiPsf *psf,
                                         double lambda,
                                         uint32_t iters,
                                         double eps_tv,
                                         uint8_t *line_search_failed,
                                         struct SsiImage **out);

// PSNR (peak 1), SSIM, MI and SMI of `estimate` against `reference`.
//
// # Safety
// Pointers must be valid; `out` must be writable.
enum SsiStatus ssi_metrics(const struct SsiImage *reference,
                           const struct SsiImage *estimate,
                           struct SsiMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSI_H */
