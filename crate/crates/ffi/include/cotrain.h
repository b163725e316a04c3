#ifndef COTRAIN_H
#define COTRAIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CotrainStatus {
  COTRAIN_STATUS_OK = 0,
  COTRAIN_STATUS_NULL_ARGUMENT = 1,
  COTRAIN_STATUS_INVALID_UTF8 = 2,
  // Malformed JSON or a record that fails validation.
  COTRAIN_STATUS_INVALID_INPUT = 3,
  COTRAIN_STATUS_CONFIG = 4,
  COTRAIN_STATUS_BACKEND = 5,
  COTRAIN_STATUS_IO = 6,
  COTRAIN_STATUS_CHECKPOINT = 7,
  COTRAIN_STATUS_NOT_FOUND = 8,
  COTRAIN_STATUS_PANIC = 9,
} CotrainStatus;

// Pseudo-label set.
typedef struct CotrainLabels CotrainLabels;

// Evaluation report.
typedef struct CotrainReport CotrainReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Owned by the library and
// valid until the next call on the same thread.
const char *cotrain_last_error(void);

// Releases a string returned by the library. Null is ignored.
//
// # Safety
// `s` must be null or a string returned by this library that has not been freed.
void cotrain_string_free(char *s);

// Intersection over union of two `[x1, y1, x2, y2]` boxes.
//
// # Safety
// `a` and `b` must point to four doubles; `out` must be writable.
enum CotrainStatus cotrain_iou(const double (*a)[4], const double (*b)[4], double *out);

// Parses a pseudo-label set from JSON. Accepts a full set or a plain
// `{image_id: [detections]}` map, which becomes a view-1 set of cycle 0.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum CotrainStatus cotrain_labels_from_json(const char *json, struct CotrainLabels **out);

// Serializes a set to JSON. Free the result with [`cotrain_string_free`].
//
// # Safety
// `labels` must be a live handle; `out` must be writable.
enum CotrainStatus cotrain_labels_to_json(const struct CotrainLabels *labels, char **out);

// Number of images and boxes in a set.
//
// # Safety
// `labels` must be a live handle; the outputs must be writable.
enum CotrainStatus cotrain_labels_counts(const struct CotrainLabels *labels,
                                         size_t *num_images,
                                         size_t *num_boxes);

// # Safety
// `labels` must be null or a handle that has not been freed.
void cotrain_labels_free(struct CotrainLabels *labels);

// Accumulates `newer` into `old`: images present in `newer` take its labels.
//
// # Safety
// Both inputs must be live handles; `out` must be writable.
enum CotrainStatus cotrain_fuse(const struct CotrainLabels *old,
                                const struct CotrainLabels *newer,
                                struct CotrainLabels **out);

// Evaluates detections against ground truth given as `{image_id: [{category, bbox}]}`.
// Ground-truth boxes shorter than `min_height` are ignored.
//
// # Safety
// `dets` must be a live handle, `gt_json` a nul-terminated string, `out` writable.
enum CotrainStatus cotrain_evaluate(const struct CotrainLabels *dets,
                                    const char *gt_json,
                                    double min_height,
                                    struct CotrainReport **out);

// Mean AP in percent.
//
// # Safety
// `report` must be a live handle; `out` must be writable.
enum CotrainStatus cotrain_report_map(const struct CotrainReport *report, double *out);

// AP of one category in percent; `NotFound` if the category was not evaluated.
//
// # Safety
// `report` must be a live handle, `category` a nul-terminated string, `out` writable.
enum CotrainStatus cotrain_report_ap(const struct CotrainReport *report,
                                     const char *category,
                                     double *out);

// Full report as JSON. Free the result with [`cotrain_string_free`].
//
// # Safety
// `report` must be a live handle; `out` must be writable.
enum CotrainStatus cotrain_report_to_json(const struct CotrainReport *report, char **out);

// # Safety
// `report` must be null or a handle that has not been freed.
void cotrain_report_free(struct CotrainReport *report);

// Runs co-training on a simulated world with `labeled_percent` of images labeled and
// returns the final pseudo-labels. JSON arguments may be null for defaults. With a
// `run_dir`, checkpoints are written there and an interrupted run resumes.
//
// # Safety
// String arguments must be null or nul-terminated; `out` must be writable.
enum CotrainStatus cotrain_run_simulated(const char *world_json,
                                         const char *simulator_json,
                                         const char *config_json,
                                         double labeled_percent,
                                         const char *run_dir,
                                         struct CotrainLabels **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COTRAIN_H */
