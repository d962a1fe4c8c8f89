#ifndef PAXKIT_H
#define PAXKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PaxStatus {
  PAX_STATUS_OK = 0,
  PAX_STATUS_NULL_POINTER = 1,
  PAX_STATUS_INVALID_ARGUMENT = 2,
  PAX_STATUS_IO = 3,
  PAX_STATUS_MODEL = 4,
  PAX_STATUS_PANIC = 5,
} PaxStatus;

// Opaque list of detections.
typedef struct PaxDetections PaxDetections;

// Opaque loaded model.
typedef struct PaxModel PaxModel;

// Rotated rectangle: center, side lengths, rotation of the `w` side in
// radians.
typedef struct PaxObb {
  double cx;
  double cy;
  double w;
  double h;
  double theta;
} PaxObb;

// One decoded detection in pixel coordinates.
typedef struct PaxDetection {
  size_t class_index;
  double score;
  struct PaxObb obb;
} PaxDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pax_version(void);

// Message of the last failed call on this thread, or NULL. The pointer
// stays valid until the next call on the same thread.
const char *pax_last_error(void);

// Rotated IoU of two boxes.
//
// # Safety
// `a`, `b` and `out` must be valid pointers.
enum PaxStatus pax_rotated_iou(const struct PaxObb *a, const struct PaxObb *b, double *out);

// Minimum-area rectangle of `n` points stored as interleaved `x, y`.
//
// # Safety
// `xy` must point to `2 * n` doubles and `out` must be valid.
enum PaxStatus pax_min_area_rect(const double *xy, size_t n, struct PaxObb *out);

// Four-peak axis label of direction `theta` (radians) into `out[0..n_bins]`.
//
// # Safety
// `out` must point to `n_bins` writable doubles.
enum PaxStatus pax_axis_encode(double theta, size_t n_bins, double sigma, double *out);

// Principal direction in `[0, pi/2)` of an encoding or logit vector.
//
// # Safety
// `values` must point to `n` doubles and `out` must be valid.
enum PaxStatus pax_axis_decode(const double *values, size_t n, double *out);

// Minimum-cost assignment of a row-major `rows x cols` matrix. Writes the
// assigned column of each row to `row_to_col`, or -1 for unassigned rows.
//
// # Safety
// `costs` must point to `rows * cols` doubles and `row_to_col` to `rows`
// writable integers.
enum PaxStatus pax_hungarian(const double *costs, size_t rows, size_t cols, int64_t *row_to_col);

// Loads a checkpoint written by `paxkit train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum PaxStatus pax_model_load(const char *path, struct PaxModel **out);

// Releases a model. NULL is ignored.
//
// # Safety
// `model` must come from [`pax_model_load`] and not be used afterwards.
void pax_model_free(struct PaxModel *model);

// Number of classes the model predicts.
//
// # Safety
// `model` must be a live handle or NULL (which yields 0).
size_t pax_model_num_classes(const struct PaxModel *model);

// Runs the model on an RGB image of `height x width` pixels, row-major with
// interleaved channels and values in `[0, 1]`. Detections scoring below
// `threshold` are dropped.
//
// # Safety
// `model` must be a live handle, `rgb` must point to `height * width * 3`
// doubles and `out` must be valid.
enum PaxStatus pax_model_detect(const struct PaxModel *model,
                                const double *rgb,
                                size_t height,
                                size_t width,
                                double threshold,
                                struct PaxDetections **out);

// Number of detections in a list; 0 for NULL.
//
// # Safety
// `dets` must be a live handle or NULL.
size_t pax_detections_len(const struct PaxDetections *dets);

// Copies detection `index` into `out`.
//
// # Safety
// `dets` must be a live handle and `out` valid.
enum PaxStatus pax_detections_get(const struct PaxDetections *dets,
                                  size_t index,
                                  struct PaxDetection *out);

// Releases a detection list. NULL is ignored.
//
// # Safety
// `dets` must come from [`pax_model_detect`] and not be used afterwards.
void pax_detections_free(struct PaxDetections *dets);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PAXKIT_H */
