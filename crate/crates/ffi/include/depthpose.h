#ifndef DEPTHPOSE_H
#define DEPTHPOSE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DpStatus {
  DP_STATUS_OK = 0,
  DP_STATUS_NULL_ARGUMENT = 1,
  DP_STATUS_INVALID_ARGUMENT = 2,
  DP_STATUS_IO = 3,
  DP_STATUS_FORMAT = 4,
  DP_STATUS_MODEL = 5,
  DP_STATUS_OUT_OF_RANGE = 6,
  DP_STATUS_PANIC = 7,
} DpStatus;

/**
 * A network with its training configuration.
 */
typedef struct DpModel DpModel;

/**
 * Skeletons decoded from one image, in full-resolution pixel coordinates.
 */
typedef struct DpPoses DpPoses;

typedef struct DpKeypoint {
  float x;
  float y;
  float score;
  /**
   * 1 when the joint was detected, 0 otherwise.
   */
  int32_t present;
} DpKeypoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *dp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dp_version(void);

/**
 * A freshly initialized desk-scale model trained for `factor` (8 or 10).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum DpStatus dp_model_new_desk(uint64_t seed, uint32_t factor, struct DpModel **out);

/**
 * Loads a checkpoint written by the trainer (with its config sidecar).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DpStatus dp_model_load(const char *path, struct DpModel **out);

/**
 * Writes the model as a checkpoint at iteration 0 plus its config sidecar.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum DpStatus dp_model_save(const struct DpModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void dp_model_free(struct DpModel *model);

/**
 * Joint count and downsampling factor of the model.
 *
 * # Safety
 * `model` must be a live handle; the output pointers must be writable.
 */
enum DpStatus dp_model_info(const struct DpModel *model, size_t *num_joints, uint32_t *factor);

/**
 * Estimates poses on a row-major depth buffer in millimetres.
 *
 * With `full_resolution` nonzero the buffer is degraded by the model's factor
 * first; otherwise it is taken as the low-resolution input. `flip` nonzero
 * enables the flip test. Coordinates are in the full-resolution frame.
 *
 * # Safety
 * `depth` must point to `width * height` values; `model` must be live and
 * `out` writable.
 */
enum DpStatus dp_model_infer(const struct DpModel *model,
                             const uint16_t *depth,
                             size_t width,
                             size_t height,
                             int32_t full_resolution,
                             int32_t flip,
                             struct DpPoses **out);

/**
 * Number of persons; 0 for a null handle.
 *
 * # Safety
 * `poses` must be null or a live handle.
 */
size_t dp_poses_count(const struct DpPoses *poses);

/**
 * # Safety
 * `poses` must be a live handle and `out` writable.
 */
enum DpStatus dp_poses_person_score(const struct DpPoses *poses, size_t person, float *out);

/**
 * Keypoint `joint` of `person`; absent joints report `present = 0`.
 *
 * # Safety
 * `poses` must be a live handle and `out` writable.
 */
enum DpStatus dp_poses_keypoint(const struct DpPoses *poses,
                                size_t person,
                                size_t joint,
                                struct DpKeypoint *out);

/**
 * # Safety
 * `poses` must be null or a handle from this library not yet freed.
 */
void dp_poses_free(struct DpPoses *poses);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEPTHPOSE_H */
