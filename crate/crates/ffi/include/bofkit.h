#ifndef BOFKIT_H
#define BOFKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BofStatus {
  BOF_STATUS_OK = 0,
  BOF_STATUS_NULL_POINTER = 1,
  BOF_STATUS_INVALID_ARGUMENT = 2,
  BOF_STATUS_NON_FINITE = 3,
  BOF_STATUS_DEGENERATE_BOX = 4,
  BOF_STATUS_SHAPE_MISMATCH = 5,
  BOF_STATUS_UNKNOWN_IMAGE = 6,
  BOF_STATUS_PANIC = 7,
  BOF_STATUS_OTHER = 8,
} BofStatus;

typedef enum BofIouKind {
  BOF_IOU_KIND_IOU = 0,
  BOF_IOU_KIND_GIOU = 1,
  BOF_IOU_KIND_DIOU = 2,
  BOF_IOU_KIND_CIOU = 3,
} BofIouKind;

typedef enum BofLossKind {
  BOF_LOSS_KIND_MSE = 0,
  BOF_LOSS_KIND_IOU = 1,
  BOF_LOSS_KIND_GIOU = 2,
  BOF_LOSS_KIND_DIOU = 3,
  BOF_LOSS_KIND_CIOU = 4,
} BofLossKind;

typedef enum BofActivation {
  BOF_ACTIVATION_MISH = 0,
  BOF_ACTIVATION_SWISH = 1,
  BOF_ACTIVATION_LEAKY_RELU = 2,
} BofActivation;

typedef enum BofNmsKind {
  BOF_NMS_KIND_GREEDY = 0,
  BOF_NMS_KIND_DIOU = 1,
  BOF_NMS_KIND_SOFT_LINEAR = 2,
  BOF_NMS_KIND_SOFT_GAUSSIAN = 3,
} BofNmsKind;

/**
 * Cross-mini-batch normalization statistics.
 */
typedef struct BofCmBn BofCmBn;

/**
 * List of detections.
 */
typedef struct BofDetections BofDetections;

/**
 * Ground truth plus detections awaiting evaluation.
 */
typedef struct BofEvaluator BofEvaluator;

/**
 * Corner-form box.
 */
typedef struct BofBox {
  double x_min;
  double y_min;
  double x_max;
  double y_max;
} BofBox;

/**
 * Center-form box.
 */
typedef struct BofCenterBox {
  double x_c;
  double y_c;
  double w;
  double h;
} BofCenterBox;

typedef struct BofDetection {
  struct BofBox bbox;
  double score;
  uint32_t class_id;
} BofDetection;

/**
 * Soft-NMS settings; ignored by the hard variants.
 */
typedef struct BofSoftNmsParams {
  double sigma;
  double score_floor;
} BofSoftNmsParams;

/**
 * AP columns; a metric is meaningful only when its `has_*` flag is set.
 */
typedef struct BofEvalResult {
  /**
   * AP, AP50, AP75, AP_S, AP_M, AP_L.
   */
  double values[6];
  bool has_value[6];
} BofEvalResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null when the last call
 * succeeded. The pointer stays valid until the next call on this thread.
 */
const char *bof_last_error(void);

/**
 * Overlap metric between two corner boxes.
 *
 * # Safety
 * `a`, `b` and `out` must be null or valid for the pointed-to type.
 */
enum BofStatus bof_overlap(enum BofIouKind kind,
                           const struct BofBox *a,
                           const struct BofBox *b,
                           double *out);

/**
 * Box-regression loss and its gradient w.r.t. the prediction's
 * `(x_c, y_c, w, h)`. `grad` may be null.
 *
 * # Safety
 * Non-null pointers must be valid; `grad` must hold 4 doubles.
 */
enum BofStatus bof_box_loss(enum BofLossKind kind,
                            const struct BofCenterBox *pred,
                            const struct BofCenterBox *truth,
                            double *value,
                            double *grad);

/**
 * Decodes one raw box prediction at grid cell `(cell_x, cell_y)` with the
 * given anchor, stride and grid sensitivity (1 disables the scaling).
 *
 * # Safety
 * `t` must be null or hold `t_x, t_y, t_w, t_h`; `out` must be null or valid.
 */
enum BofStatus bof_decode_box(const double *t,
                              size_t cell_x,
                              size_t cell_y,
                              double stride,
                              double anchor_w,
                              double anchor_h,
                              double sensitivity,
                              struct BofCenterBox *out);

/**
 * Activation value and derivative at `x`. `slope` is used by leaky ReLU only.
 *
 * # Safety
 * Non-null pointers must be valid. `derivative` may be null.
 */
enum BofStatus bof_activation(enum BofActivation kind,
                              double slope,
                              double x,
                              double *value,
                              double *derivative);

/**
 * # Safety
 * `out` must be null or valid.
 */
enum BofStatus bof_cosine_lr(uint64_t t, uint64_t total, double lr_max, double lr_min, double *out);

/**
 * # Safety
 * `milestones` must point at `n_milestones` values; `out` must be valid.
 */
enum BofStatus bof_step_decay_lr(uint64_t t,
                                 const uint64_t *milestones,
                                 size_t n_milestones,
                                 double lr0,
                                 double factor,
                                 double *out);

/**
 * Creates an empty detection list.
 */
struct BofDetections *bof_detections_new(void);

/**
 * # Safety
 * `list` must come from this library and not be used afterwards.
 */
void bof_detections_free(struct BofDetections *list);

/**
 * # Safety
 * Pointers must be null or valid.
 */
enum BofStatus bof_detections_push(struct BofDetections *list, const struct BofDetection *det);

/**
 * Number of detections; 0 for a null handle.
 *
 * # Safety
 * `list` must be null or valid.
 */
size_t bof_detections_len(const struct BofDetections *list);

/**
 * # Safety
 * Pointers must be null or valid.
 */
enum BofStatus bof_detections_get(const struct BofDetections *list,
                                  size_t index,
                                  struct BofDetection *out);

/**
 * Runs NMS and stores a new list of survivors, in score order, in `*out`.
 * `soft` is required for the soft variants only.
 *
 * # Safety
 * Pointers must be null or valid; the result must be released with
 * [`bof_detections_free`].
 */
enum BofStatus bof_nms(const struct BofDetections *list,
                       enum BofNmsKind kind,
                       double threshold,
                       const struct BofSoftNmsParams *soft,
                       struct BofDetections **out);

/**
 * # Safety
 * `out` must be null or valid.
 */
enum BofStatus bof_cmbn_new(size_t channels, size_t minibatches_per_batch, struct BofCmBn **out);

/**
 * # Safety
 * `acc` must come from this library and not be used afterwards.
 */
void bof_cmbn_free(struct BofCmBn *acc);

/**
 * Folds in one mini-batch laid out channel-major (`channels × per_channel`
 * values) and writes the running mean and variance of the current batch.
 *
 * # Safety
 * `values` must hold `channels * per_channel` doubles; `mean` and
 * `variance` must each hold `channels` doubles.
 */
enum BofStatus bof_cmbn_update(struct BofCmBn *acc,
                               const double *values,
                               size_t per_channel,
                               double *mean,
                               double *variance);

struct BofEvaluator *bof_evaluator_new(void);

/**
 * # Safety
 * `ev` must come from this library and not be used afterwards.
 */
void bof_evaluator_free(struct BofEvaluator *ev);

/**
 * Registers an image, which may have no ground truth.
 *
 * # Safety
 * `ev` must be null or valid.
 */
enum BofStatus bof_evaluator_add_image(struct BofEvaluator *ev, uint64_t image_id);

/**
 * # Safety
 * Pointers must be null or valid.
 */
enum BofStatus bof_evaluator_add_truth(struct BofEvaluator *ev,
                                       uint64_t image_id,
                                       const struct BofBox *bbox,
                                       uint32_t class_id);

/**
 * # Safety
 * Pointers must be null or valid.
 */
enum BofStatus bof_evaluator_add_detection(struct BofEvaluator *ev,
                                           uint64_t image_id,
                                           const struct BofDetection *det);

/**
 * # Safety
 * Pointers must be null or valid.
 */
enum BofStatus bof_evaluator_run(const struct BofEvaluator *ev, struct BofEvalResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BOFKIT_H */
