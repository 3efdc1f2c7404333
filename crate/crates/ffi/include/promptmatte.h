#ifndef PROMPTMATTE_H
#define PROMPTMATTE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum PmStatus {
  PM_STATUS_OK = 0,
  PM_STATUS_NULL_POINTER = 1,
  PM_STATUS_INVALID_ARGUMENT = 2,
  PM_STATUS_DIMENSION = 3,
  PM_STATUS_IO = 4,
  PM_STATUS_FORMAT = 5,
  PM_STATUS_RUNTIME = 6,
  PM_STATUS_PANIC = 7,
} PmStatus;

// Opaque loaded checkpoint.
typedef struct PmModel PmModel;

// The five matting errors of one prediction.
typedef struct PmMetrics {
  double mse;
  double mad;
  double sad;
  double grad;
  double conn;
} PmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pm_version(void);

// Copies the calling thread's last error message into `buf` (NUL-terminated, truncated to `len`).
// Returns the full message length without the terminator; `buf` may be null to query it.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t pm_last_error_message(char *buf, size_t len);

// Mean relative reduction (percent) of `method` against `baseline`, both of length `n`.
//
// # Safety
// `baseline` and `method` must point to `n` doubles; `out` must be writable.
enum PmStatus pm_impro(const double *baseline, const double *method, size_t n, double *out);

// MSE, MAD, SAD, Grad and Conn of a predicted matte against ground truth, both row-major `height x width`.
//
// # Safety
// `pred` and `gt` must point to `height * width` floats; `out` must be writable.
enum PmStatus pm_matting_metrics(const float *pred,
                                 const float *gt,
                                 size_t height,
                                 size_t width,
                                 struct PmMetrics *out);

// Zero padding and per-scalar width of the coordinate embedding for `n` points.
//
// # Safety
// `padding` and `width` must be writable.
enum PmStatus pm_point_pad(size_t n, size_t *padding, size_t *width);

// Loads a checkpoint directory. Release with [`pm_model_free`].
//
// # Safety
// `dir` must be a NUL-terminated path; `out` must be writable.
enum PmStatus pm_model_load(const char *dir, struct PmModel **out);

// # Safety
// `model` must come from [`pm_model_load`] and not be used afterwards; null is ignored.
void pm_model_free(struct PmModel *model);

// Number of trainable scalars (0 for oracle fixtures).
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum PmStatus pm_model_param_count(const struct PmModel *model, size_t *out);

// Predicts an alpha matte.
//
// `image` is planar RGB `[3, height, width]` in `[0, 1]`; `prompt` uses the prompt-file syntax
// (`point x y ...`, `box x1 y1 x2 y2` in normalized `[0, 1]` coordinates, `mask path`, optional `opacity 0|1`).
// `opacity` overrides the file when 0 or 1; pass -1 to keep it (default opaque).
// `alpha_out` receives `height * width` floats.
//
// # Safety
// Pointers must be valid for the stated sizes and `prompt` NUL-terminated.
enum PmStatus pm_model_infer(const struct PmModel *model,
                             const float *image,
                             size_t height,
                             size_t width,
                             const char *prompt,
                             int opacity,
                             float *alpha_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROMPTMATTE_H */
