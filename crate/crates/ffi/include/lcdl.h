#ifndef LCDL_H
#define LCDL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Status codes. Values 1-5 match the CLI exit codes.
 */
typedef enum LcdlStatus {
  LCDL_STATUS_OK = 0,
  LCDL_STATUS_VERIFICATION = 1,
  LCDL_STATUS_CONFIG = 2,
  LCDL_STATUS_DATA = 3,
  LCDL_STATUS_DIVERGENCE = 4,
  LCDL_STATUS_CHECKPOINT = 5,
  LCDL_STATUS_NULL_POINTER = 6,
  LCDL_STATUS_BUFFER_TOO_SMALL = 7,
  LCDL_STATUS_PANIC = 8,
} LcdlStatus;

/**
 * Opaque model handle.
 */
typedef struct LcdlModel LcdlModel;

/**
 * Macro-averaged classification metrics and label RMSE.
 */
typedef struct LcdlMetrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
  double rmse;
} LcdlMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *lcdl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lcdl_version(void);

/**
 * Builds the 16-layer classifier for `channels x height x width` input.
 * Height and width must be multiples of 32.
 */
enum LcdlStatus lcdl_model_build_proposed(uintptr_t channels,
                                          uintptr_t height,
                                          uintptr_t width,
                                          uintptr_t num_classes,
                                          double dropout,
                                          uint64_t seed,
                                          struct LcdlModel **out);

/**
 * Loads a checkpoint file into a new handle.
 */
enum LcdlStatus lcdl_model_load(const char *path, struct LcdlModel **out);

enum LcdlStatus lcdl_model_save(const struct LcdlModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 */
void lcdl_model_free(struct LcdlModel *model);

enum LcdlStatus lcdl_model_input_shape(const struct LcdlModel *model,
                                       uintptr_t *channels,
                                       uintptr_t *height,
                                       uintptr_t *width);

enum LcdlStatus lcdl_model_num_classes(const struct LcdlModel *model, uintptr_t *out);

enum LcdlStatus lcdl_model_param_count(const struct LcdlModel *model, uintptr_t *out);

/**
 * Eval-mode class probabilities for `n` images laid out as `[n, C, H, W]`
 * row-major floats in `[0, 1]`. Writes `n * K` probabilities to `probs`
 * and, when `classes` is non-null, `n` argmax indices.
 */
enum LcdlStatus lcdl_model_predict(const struct LcdlModel *model,
                                   const float *images,
                                   uintptr_t n,
                                   float *probs,
                                   uintptr_t probs_len,
                                   uintptr_t *classes);

/**
 * Accuracy, macro precision/recall/F1 and label RMSE for `n` label pairs
 * over `k` classes.
 */
enum LcdlStatus lcdl_metrics(const uint32_t *true_labels,
                             const uint32_t *pred_labels,
                             uintptr_t n,
                             uintptr_t k,
                             struct LcdlMetrics *out);

/**
 * Runs the finite-difference gradient suite. Writes the worst relative
 * error to `max_rel_error` (if non-null); returns
 * `LCDL_STATUS_VERIFICATION` when any check exceeds tolerance.
 */
enum LcdlStatus lcdl_gradcheck(double *max_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LCDL_H */
