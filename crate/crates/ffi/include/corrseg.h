#ifndef CORRSEG_H
#define CORRSEG_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Attention normalization used by [`corrseg_masked_attention`].
typedef enum CorrsegAttentionMode {
  // Divide by sqrt(param), param = feature dimension.
  CORRSEG_ATTENTION_MODE_SCOPE_ONLY = 0,
  // Divide by param, a temperature.
  CORRSEG_ATTENTION_MODE_VALUE_RECON = 1,
} CorrsegAttentionMode;

typedef enum CorrsegStatus {
  CORRSEG_STATUS_OK = 0,
  CORRSEG_STATUS_NULL_POINTER = 1,
  CORRSEG_STATUS_INVALID_ARGUMENT = 2,
  CORRSEG_STATUS_SHAPE = 3,
  CORRSEG_STATUS_CONFIG = 4,
  CORRSEG_STATUS_IO = 5,
  CORRSEG_STATUS_PROVIDER = 6,
  CORRSEG_STATUS_EMPTY_EVALUATION = 7,
  CORRSEG_STATUS_INTERNAL = 8,
} CorrsegStatus;

// Pipeline configuration.
typedef struct CorrsegConfig CorrsegConfig;

// Streaming intersection/union counts.
typedef struct CorrsegMiou CorrsegMiou;

// Label map from one segmentation call.
typedef struct CorrsegResult CorrsegResult;

// A resolved provider plus class vocabulary.
typedef struct CorrsegSession CorrsegSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next failing call on the same thread.
const char *corrseg_last_error(void);

// Library version, static storage.
const char *corrseg_version(void);

// Default configuration.
struct CorrsegConfig *corrseg_config_new(void);

// Parse a JSON configuration; unspecified keys take their defaults.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum CorrsegStatus corrseg_config_from_json(const char *json, struct CorrsegConfig **out);

// Set the provider spec, e.g. `synthetic` or `fixture:<dir>`.
//
// # Safety
// `config` must come from this library; `spec` must be NUL-terminated.
enum CorrsegStatus corrseg_config_set_provider(struct CorrsegConfig *config, const char *spec);

// # Safety
// `config` must be null or come from this library, and not be used after.
void corrseg_config_free(struct CorrsegConfig *config);

// Resolve the configured provider for a class list. The configuration is
// copied.
//
// # Safety
// `classes` must point to `num_classes` NUL-terminated strings.
enum CorrsegStatus corrseg_session_new(const struct CorrsegConfig *config,
                                       const char *const *classes,
                                       size_t num_classes,
                                       struct CorrsegSession **out);

// # Safety
// `session` must be null or come from this library, and not be used after.
void corrseg_session_free(struct CorrsegSession *session);

// Segment an interleaved RGB8 buffer of `height * width * 3` bytes.
//
// # Safety
// `rgb` must point to `height * width * 3` readable bytes.
enum CorrsegStatus corrseg_segment_rgb(const struct CorrsegSession *session,
                                       const uint8_t *rgb,
                                       uint32_t width,
                                       uint32_t height,
                                       struct CorrsegResult **out);

// Segment an image file.
//
// # Safety
// `path` must be NUL-terminated.
enum CorrsegStatus corrseg_segment_file(const struct CorrsegSession *session,
                                        const char *path,
                                        struct CorrsegResult **out);

// # Safety
// `result` must come from this library.
size_t corrseg_result_height(const struct CorrsegResult *result);

// # Safety
// `result` must come from this library.
size_t corrseg_result_width(const struct CorrsegResult *result);

// # Safety
// `result` must come from this library.
size_t corrseg_result_num_classes(const struct CorrsegResult *result);

// Row-major `height * width` class indices, owned by `result`.
//
// # Safety
// `result` must come from this library.
const uint32_t *corrseg_result_labels(const struct CorrsegResult *result);

// # Safety
// `result` must be null or come from this library, and not be used after.
void corrseg_result_free(struct CorrsegResult *result);

// mIoU accumulator over `num_classes` classes; null if `num_classes` is 0.
struct CorrsegMiou *corrseg_miou_new(size_t num_classes);

// Add `len` prediction/ground-truth pairs; ground truth equal to `ignore`
// is skipped.
//
// # Safety
// `pred` and `gt` must each point to `len` readable elements.
enum CorrsegStatus corrseg_miou_update(struct CorrsegMiou *acc,
                                       const uint32_t *pred,
                                       const uint8_t *gt,
                                       size_t len,
                                       uint8_t ignore);

// IoU of one class; `EmptyEvaluation` if the class never occurred.
//
// # Safety
// `acc` must come from this library; `out` must be valid.
enum CorrsegStatus corrseg_miou_class(const struct CorrsegMiou *acc, size_t class_, double *out);

// Mean IoU over the classes seen so far.
//
// # Safety
// `acc` must come from this library; `out` must be valid.
enum CorrsegStatus corrseg_miou_value(const struct CorrsegMiou *acc, double *out);

// # Safety
// `acc` must be null or come from this library, and not be used after.
void corrseg_miou_free(struct CorrsegMiou *acc);

// Interaction matrix for `n` patches. `regions[i]` is the region of patch
// `i` (0 = unsegmented); `similarity` is `n * n` row-major. Writes
// `n * n` bytes of 0/1 to `out`.
//
// # Safety
// Buffers must hold the stated number of elements.
enum CorrsegStatus corrseg_semantic_matrix(const uint32_t *regions,
                                           const float *similarity,
                                           size_t n,
                                           uint8_t *out);

// Row-wise masked softmax. `mask` is `n * n` bytes, non-zero = allowed;
// its diagonal must be set and it must be symmetric. Writes `n * n`
// floats to `out`.
//
// # Safety
// Buffers must hold the stated number of elements.
enum CorrsegStatus corrseg_masked_attention(const float *similarity,
                                            const uint8_t *mask,
                                            size_t n,
                                            enum CorrsegAttentionMode mode,
                                            double param,
                                            float *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORRSEG_H */
