#ifndef TILEFUSE_H
#define TILEFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TfStatus {
  TF_STATUS_OK = 0,
  TF_STATUS_NULL_POINTER = 1,
  TF_STATUS_INVALID_UTF8 = 2,
  TF_STATUS_INVALID_ARGUMENT = 3,
  TF_STATUS_PARSE = 4,
  TF_STATUS_NOT_FOUND = 5,
  TF_STATUS_IO = 6,
  TF_STATUS_UNKNOWN_TILE = 7,
  TF_STATUS_FRAME_MISMATCH = 8,
  TF_STATUS_UNKNOWN_SOURCE = 9,
  TF_STATUS_NO_GROUND_TRUTH = 10,
  TF_STATUS_OUT_OF_RANGE = 11,
  TF_STATUS_PANIC = 12,
  TF_STATUS_OTHER = 13,
} TfStatus;

typedef enum TfFrame {
  TF_FRAME_TILE_LOCAL = 0,
  TF_FRAME_GLOBAL = 1,
} TfFrame;

/**
 * Opaque detection set.
 */
typedef struct TfDetections TfDetections;

/**
 * Opaque tile plan.
 */
typedef struct TfPlan TfPlan;

typedef struct TfBox {
  double xmin;
  double ymin;
  double xmax;
  double ymax;
} TfBox;

typedef struct TfTile {
  uint32_t id;
  uint32_t x0;
  uint32_t y0;
  uint32_t w;
  uint32_t h;
} TfTile;

/**
 * One detection without its source name; `tile_id` is -1 when absent.
 */
typedef struct TfDetection {
  struct TfBox bbox;
  uint32_t class_id;
  double score;
  int64_t tile_id;
} TfDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer is
 * valid until the next tilefuse call on the same thread.
 */
const char *tf_last_error_message(void);

/**
 * Frees a string returned by this library. Null is ignored.
 */
void tf_string_free(char *s);

enum TfStatus tf_iou(struct TfBox a, struct TfBox b, double *out);

enum TfStatus tf_eiou(struct TfBox a, struct TfBox b, double *out);

/**
 * Plans tiles for an image. `radius <= 0` selects `min(tile_w, tile_h) / 2`;
 * `k == 0` selects the default candidate count.
 */
enum TfStatus tf_plan_tiles(uint32_t image_w,
                            uint32_t image_h,
                            uint32_t tile_w,
                            uint32_t tile_h,
                            double radius,
                            uint32_t k,
                            uint64_t seed,
                            struct TfPlan **out);

enum TfStatus tf_plan_from_json(const char *json, struct TfPlan **out);

/**
 * Number of tiles; 0 for a null handle.
 */
size_t tf_plan_len(const struct TfPlan *plan);

enum TfStatus tf_plan_tile(const struct TfPlan *plan, size_t index, struct TfTile *out);

enum TfStatus tf_plan_to_json(const struct TfPlan *plan, char **out);

/**
 * Writes whether every pixel center of the image lies in some tile.
 */
enum TfStatus tf_plan_verify_coverage(const struct TfPlan *plan, bool *covered);

void tf_plan_free(struct TfPlan *plan);

/**
 * Parses detection JSONL in the given frame.
 */
enum TfStatus tf_detections_parse(const char *jsonl,
                                  enum TfFrame frame_kind,
                                  struct TfDetections **out);

/**
 * Number of detections; 0 for a null handle.
 */
size_t tf_detections_len(const struct TfDetections *set);

enum TfStatus tf_detections_get(const struct TfDetections *set,
                                size_t index,
                                struct TfDetection *out);

enum TfStatus tf_detections_to_jsonl(const struct TfDetections *set, char **out);

/**
 * Moves a tile-local set into image coordinates. Detections clipped to
 * nothing are dropped; their count goes to `dropped` when it is not null.
 */
enum TfStatus tf_detections_remap(const struct TfDetections *set,
                                  const struct TfPlan *plan,
                                  struct TfDetections **out,
                                  size_t *dropped);

/**
 * Fuses `count` global sets. `config_json` is a fusion configuration object
 * or null for the defaults.
 */
enum TfStatus tf_detections_fuse(const struct TfDetections *const *sets,
                                 size_t count,
                                 const char *config_json,
                                 struct TfDetections **out);

void tf_detections_free(struct TfDetections *set);

/**
 * Evaluates a global set against ground-truth JSONL and writes the report
 * as JSON. `iou_threshold <= 0` selects 0.5.
 */
enum TfStatus tf_evaluate(const struct TfDetections *set,
                          const char *ground_truth_jsonl,
                          double iou_threshold,
                          char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TILEFUSE_H */
