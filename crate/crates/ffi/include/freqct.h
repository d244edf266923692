#ifndef FREQCT_H
#define FREQCT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum {
  FCT_STATUS_OK = 0,
  FCT_STATUS_NULL_POINTER = 1,
  FCT_STATUS_INVALID_ARGUMENT = 2,
  FCT_STATUS_SHAPE_MISMATCH = 3,
  FCT_STATUS_IO = 4,
  FCT_STATUS_FORMAT = 5,
  FCT_STATUS_NUMERIC = 6,
  FCT_STATUS_CONFIG = 7,
  FCT_STATUS_PANIC = 8,
} FctStatus;

/**
 * Grid semantic kind.
 */
typedef enum {
  FCT_KIND_IMAGE = 0,
  FCT_KIND_SINOGRAM = 1,
  FCT_KIND_GENERIC = 2,
} FctKind;

/**
 * Tensor file payload precision.
 */
typedef enum {
  FCT_DTYPE_F32 = 0,
  FCT_DTYPE_F64 = 1,
} FctDtype;

/**
 * Opaque 2D grid of doubles.
 */
typedef struct FctGrid FctGrid;

/**
 * Opaque trained denoiser with its normalization scale.
 */
typedef struct FctNet FctNet;

typedef struct {
  size_t image_size;
  size_t n_angles;
  size_t n_detectors;
  double detector_spacing;
} FctGeometry;

typedef struct {
  double r1;
  double r2;
  double beta;
  double z_delta;
  size_t n;
  double clamp_t;
} FctPerturbConfig;

typedef struct {
  size_t steps;
  double lr;
  size_t hidden_channels;
  bool final_relu;
  double scale_quantile;
  bool use_clamp;
} FctTrainConfig;

typedef struct {
  double i0;
  double gaussian_sigma;
  double floor_counts;
} FctNoiseModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *fct_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fct_version(void);

/**
 * Copies `rows * cols` doubles from `data` into a new grid.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles; `out` must be writable.
 */
FctStatus fct_grid_new(size_t rows, size_t cols, FctKind kind, const double *data, FctGrid **out);

/**
 * Releases a grid. Null is ignored.
 *
 * # Safety
 * `grid` must come from this library and not be used afterwards.
 */
void fct_grid_free(FctGrid *grid);

/**
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_grid_shape(const FctGrid *grid, size_t *rows, size_t *cols);

/**
 * Borrowed row-major data, valid while the grid lives.
 *
 * # Safety
 * `grid` must be a live handle.
 */
const double *fct_grid_data(const FctGrid *grid);

/**
 * Reads a tensor file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
FctStatus fct_grid_read(const char *path, FctGrid **out);

/**
 * # Safety
 * `grid` must be live; `path` NUL-terminated.
 */
FctStatus fct_grid_write(const FctGrid *grid, const char *path, FctDtype dtype);

FctGeometry fct_geometry_desk(void);

FctPerturbConfig fct_perturb_default(void);

FctTrainConfig fct_train_default(void);

/**
 * # Safety
 * `out` must be writable.
 */
FctStatus fct_shepp_logan(size_t size, FctGrid **out);

/**
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_radon(const FctGrid *image, const FctGeometry *geometry, FctGrid **out);

/**
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_fbp(const FctGrid *sino, const FctGeometry *geometry, FctGrid **out);

/**
 * Low-dose measurement of a clean sinogram.
 *
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_simulate_ldct(const FctGrid *clean,
                            const FctNoiseModel *model,
                            uint64_t seed,
                            FctGrid **out);

/**
 * One noise-perturbed pseudo-sample.
 *
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_ppnp(const FctGrid *sino,
                   const FctPerturbConfig *config,
                   uint64_t seed,
                   FctGrid **out);

/**
 * One mask-perturbed pseudo-sample.
 *
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_ppmp(const FctGrid *sino,
                   const FctPerturbConfig *config,
                   uint64_t seed,
                   FctGrid **out);

/**
 * Trains a denoiser on one non-negative low-dose sinogram.
 *
 * # Safety
 * Pointers must be valid; `losses` may be null, otherwise it must hold
 * `train->steps` doubles.
 */
FctStatus fct_train(const FctGrid *sino,
                    const FctPerturbConfig *perturb,
                    const FctTrainConfig *train,
                    uint64_t seed,
                    double *losses,
                    FctNet **out);

/**
 * Releases a net. Null is ignored.
 *
 * # Safety
 * `net` must come from this library and not be used afterwards.
 */
void fct_net_free(FctNet *net);

/**
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_net_scale(const FctNet *net, double *scale);

/**
 * Denoises with the scale stored in the net.
 *
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_net_infer(const FctNet *net, const FctGrid *sino, FctGrid **out);

/**
 * Writes the net as a bundle directory.
 *
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_net_save(const FctNet *net, const char *dir);

/**
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_net_load(const char *dir, FctNet **out);

/**
 * PSNR in dB. `data_range <= 0` (or NaN) selects the reference's range.
 *
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_psnr(const FctGrid *reference, const FctGrid *test, double data_range, double *out);

/**
 * SSIM. `data_range` as for [`fct_psnr`].
 *
 * # Safety
 * Pointers must be valid.
 */
FctStatus fct_ssim(const FctGrid *reference, const FctGrid *test, double data_range, double *out);

/**
 * Full pipeline into `output_dir`. `config_path` may be null for the desk
 * profile with seed 0.
 *
 * # Safety
 * `config_path` is null or NUL-terminated; `output_dir` NUL-terminated.
 */
FctStatus fct_run_all(const char *config_path, const char *output_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FREQCT_H */
