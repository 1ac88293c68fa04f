#ifndef LOCCONF_H
#define LOCCONF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum LcNmsVariant {
  LC_NMS_VARIANT_TRADITIONAL = 0,
  LC_NMS_VARIANT_SOFT_LINEAR = 1,
  LC_NMS_VARIANT_SOFT_GAUSSIAN = 2,
  LC_NMS_VARIANT_IOU_GUIDED = 3,
} LcNmsVariant;

/**
 * Result code of every fallible call.
 */
typedef enum LcStatus {
  LC_STATUS_OK = 0,
  LC_STATUS_NULL_POINTER = 1,
  LC_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A box or bin with non-positive extent or non-finite coordinates.
   */
  LC_STATUS_DEGENERATE = 3,
  LC_STATUS_IO = 4,
  /**
   * Malformed file contents.
   */
  LC_STATUS_FORMAT = 5,
  /**
   * The output buffer cannot hold the result; the required length is reported.
   */
  LC_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  LC_STATUS_PANIC = 7,
} LcStatus;

/**
 * Opaque feature map.
 */
typedef struct LcFeatureMap LcFeatureMap;

/**
 * Opaque IoU predictor.
 */
typedef struct LcPredictor LcPredictor;

typedef struct LcNmsConfig {
  enum LcNmsVariant variant;
  double omega_nms;
  double sigma;
  double score_floor;
  bool per_class;
} LcNmsConfig;

typedef struct LcRefineConfig {
  uint32_t steps;
  double lambda;
  double omega1;
  double omega2;
  bool rollback_on_degrade;
} LcRefineConfig;

typedef struct LcGroundTruth {
  double bbox[4];
  uint32_t class_id;
  uint64_t object_id;
} LcGroundTruth;

typedef struct LcDetection {
  double bbox[4];
  uint32_t class_id;
  double cls_score;
  /**
   * Localization confidence; read only when `has_loc_score` is set.
   */
  double loc_score;
  bool has_loc_score;
} LcDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last error on this thread; empty if none. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *lc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lc_version(void);

struct LcNmsConfig lc_nms_config_default(void);

struct LcRefineConfig lc_refine_config_default(void);

/**
 * Creates a feature map from `height * width * channels` values.
 *
 * # Safety
 * `values` must point to `len` readable doubles; `out_map` must be writable.
 */
enum LcStatus lc_featmap_new(size_t height,
                             size_t width,
                             size_t channels,
                             const double *values,
                             size_t len,
                             struct LcFeatureMap **out_map);

/**
 * Loads a `.prfm` feature map.
 *
 * # Safety
 * `file` must be a NUL-terminated string; `out_map` must be writable.
 */
enum LcStatus lc_featmap_load(const char *file, struct LcFeatureMap **out_map);

/**
 * # Safety
 * `map` must come from `lc_featmap_new`/`lc_featmap_load` or be null.
 */
void lc_featmap_free(struct LcFeatureMap *map);

/**
 * # Safety
 * `map` must be a live handle; the out pointers must be writable.
 */
enum LcStatus lc_featmap_dims(const struct LcFeatureMap *map,
                              size_t *height,
                              size_t *width,
                              size_t *channels);

/**
 * Intersection over union of two boxes.
 *
 * # Safety
 * `a` and `b` must point to 4 doubles; `result` must be writable.
 */
enum LcStatus lc_iou(const double *a, const double *b, double *result);

/**
 * Exact average of the interpolated map over `bin = (x1, y1, x2, y2)`.
 *
 * # Safety
 * `map` must be a live handle, `bin` must point to 4 doubles and `result`
 * must be writable.
 */
enum LcStatus lc_prpool_bin(const struct LcFeatureMap *map,
                            const double *bin,
                            size_t channel,
                            double *result);

/**
 * Gradient of `lc_prpool_bin` with respect to `(x1, y1, x2, y2)`.
 *
 * # Safety
 * As for `lc_prpool_bin`, with `grad` pointing to 4 writable doubles.
 */
enum LcStatus lc_prpool_grad(const struct LcFeatureMap *map,
                             const double *bin,
                             size_t channel,
                             double *grad);

/**
 * Predictor returning the true IoU against the given ground truth.
 *
 * # Safety
 * `gts` must point to `n` readable records; `out_predictor` must be writable.
 */
enum LcStatus lc_predictor_oracle_new(const struct LcGroundTruth *gts,
                                      size_t n,
                                      struct LcPredictor **out_predictor);

/**
 * Loads a trained IoU head checkpoint.
 *
 * # Safety
 * `file` must be a NUL-terminated string; `out_predictor` must be writable.
 */
enum LcStatus lc_predictor_load(const char *file, struct LcPredictor **out_predictor);

/**
 * # Safety
 * `predictor` must come from an `lc_predictor_*` constructor or be null.
 */
void lc_predictor_free(struct LcPredictor *predictor);

/**
 * Predicted IoU of `bbox` on `map`.
 *
 * # Safety
 * Handles must be live; `bbox` must point to 4 doubles and `result` must be
 * writable.
 */
enum LcStatus lc_predictor_value(const struct LcPredictor *predictor,
                                 const struct LcFeatureMap *map,
                                 const double *bbox,
                                 uint32_t class_id,
                                 double *result);

/**
 * Non-maximum suppression. Writes the kept detections to `kept` and their
 * count to `kept_len`. If `capacity` is too small, nothing is written except
 * `kept_len`, which then holds the required capacity.
 *
 * # Safety
 * `dets` must point to `n` records, `kept` to `capacity` writable records
 * (may be null when `capacity` is 0), `cfg` and `kept_len` must be valid.
 */
enum LcStatus lc_nms(const struct LcDetection *dets,
                     size_t n,
                     const struct LcNmsConfig *cfg,
                     struct LcDetection *kept,
                     size_t capacity,
                     size_t *kept_len);

/**
 * Refines `n` boxes by gradient ascent on the predictor. `boxes` holds
 * `4 * n` doubles and is updated in place; `scores` (may be null) receives
 * the final predicted IoU of each box.
 *
 * # Safety
 * Handles must be live; `boxes` must point to `4 * n` writable doubles,
 * `class_ids` to `n` values (or be null for class 0) and `scores` to `n`
 * writable doubles or be null.
 */
enum LcStatus lc_refine(const struct LcPredictor *predictor,
                        const struct LcFeatureMap *map,
                        const struct LcRefineConfig *cfg,
                        double *boxes,
                        const uint32_t *class_ids,
                        size_t n,
                        double *scores);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOCCONF_H */
