#ifndef CAPTIONCHECK_H
#define CAPTIONCHECK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every fallible call.
typedef enum CcStatus {
  CC_STATUS_OK = 0,
  // NULL pointer, bad UTF-8, zero length where data is required.
  CC_STATUS_INVALID_ARGUMENT = 1,
  // Lengths or image sizes disagree, or an output buffer is too small.
  CC_STATUS_DIM_MISMATCH = 2,
  // Cosine of an all-zero vector.
  CC_STATUS_ZERO_VECTOR = 3,
  CC_STATUS_IO = 4,
  CC_STATUS_DECODE = 5,
  // Model graph missing, unknown or failing.
  CC_STATUS_MODEL = 6,
  CC_STATUS_NON_FINITE = 7,
  CC_STATUS_EMPTY_INPUT = 8,
  // The caption was refused by the screen; the reason is the out string.
  CC_STATUS_REJECTED = 9,
  // A Rust panic was caught at the boundary.
  CC_STATUS_PANIC = 10,
} CcStatus;

// Loaded encoder (and optional detector).
typedef struct CcFeaturizer CcFeaturizer;

// Sanitizer: gazetteer first pass, capitalization heuristic second pass,
// default label map and safety topics.
typedef struct CcSanitizer CcSanitizer;

// Confusion counts and metrics. Undefined ratios are NaN.
typedef struct CcMetrics {
  uint64_t n;
  uint64_t tp;
  uint64_t fp;
  uint64_t tn;
  uint64_t fn_count;
  double accuracy;
  double precision;
  double recall;
  double f1;
} CcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *cc_last_error(void);

// Library version as a static NUL-terminated string.
const char *cc_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be NULL or a pointer returned by this library and not yet freed.
void cc_string_free(char *s);

// Cosine similarity of two `len`-element vectors, accumulated in double.
//
// # Safety
// `a` and `b` must point to `len` readable floats; `out` must be writable.
enum CcStatus cc_cosine(const float *a, const float *b, size_t len, double *out);

// SSIM of two 8-bit grayscale images, row-major, `width * height` bytes each.
//
// # Safety
// `x` and `y` must point to `width * height` readable bytes; `out` must be writable.
enum CcStatus cc_ssim_gray(const uint8_t *x,
                           const uint8_t *y,
                           uint32_t width,
                           uint32_t height,
                           double *out);

// `1 - MSE / 255^2` over two equal-length byte buffers.
//
// # Safety
// `x` and `y` must point to `len` readable bytes; `out` must be writable.
enum CcStatus cc_mse_sim(const uint8_t *x, const uint8_t *y, size_t len, double *out);

// 0 (NOOC) when both scores are at least `threshold`, otherwise 1 (OOC).
//
// # Safety
// `out_label` must be writable.
enum CcStatus cc_predict_orig_gen(double sim1, double sim2, double threshold, uint8_t *out_label);

// 1 (OOC) when `sim` is below `threshold`, otherwise 0.
//
// # Safety
// `out_label` must be writable.
enum CcStatus cc_predict_gen_gen(double sim, double threshold, uint8_t *out_label);

// Median of `len` scores; the midpoint of the central pair for even `len`.
//
// # Safety
// `scores` must point to `len` readable doubles; `out` must be writable.
enum CcStatus cc_calibrate_median(const double *scores, size_t len, double *out);

// Metrics of `len` predicted labels against gold labels (0 or 1 each),
// positive class 1.
//
// # Safety
// `pred` and `gold` must point to `len` readable bytes; `out` must be writable.
enum CcStatus cc_metrics(const uint8_t *pred,
                         const uint8_t *gold,
                         size_t len,
                         struct CcMetrics *out);

// New sanitizer with the default rules and an empty name list.
struct CcSanitizer *cc_sanitizer_new_default(void);

// # Safety
// `h` must be NULL or a handle from [`cc_sanitizer_new_default`] not yet freed.
void cc_sanitizer_free(struct CcSanitizer *h);

// Adds a known name with its entity label (for example `PERSON`, `GPE`).
//
// # Safety
// `h` must be a live sanitizer handle; `name` and `label` NUL-terminated.
enum CcStatus cc_sanitizer_add_name(struct CcSanitizer *h, const char *name, const char *label);

// Adds a blocked word or phrase.
//
// # Safety
// `h` must be a live sanitizer handle; `word` NUL-terminated.
enum CcStatus cc_sanitizer_block_word(struct CcSanitizer *h, const char *word);

// Full sanitization of one caption. On [`CcStatus::Ok`] `*out` is the
// prompt; on [`CcStatus::Rejected`] it is the rejection reason. Either way
// the string must be freed with [`cc_string_free`].
//
// # Safety
// `h` must be a live sanitizer handle, `caption` NUL-terminated, `out` writable.
enum CcStatus cc_sanitizer_screen(const struct CcSanitizer *h, const char *caption, char **out);

// Replaces `n` caller-tagged spans (char offsets `[starts[i], ends[i])` with
// entity label `labels[i]`) by their class words. No screening.
//
// # Safety
// `h` must be a live sanitizer handle; `caption` NUL-terminated; `starts`,
// `ends` and `labels` must each hold `n` entries; `out` writable.
enum CcStatus cc_sanitizer_substitute(const struct CcSanitizer *h,
                                      const char *caption,
                                      const size_t *starts,
                                      const size_t *ends,
                                      const char *const *labels,
                                      size_t n,
                                      char **out);

// Loads a featurizer. `detector_id` may be NULL or `"none"` for encoder-only
// embeddings. Returns NULL on failure (see [`cc_last_error`]).
//
// # Safety
// String arguments must be NULL (where allowed) or NUL-terminated.
struct CcFeaturizer *cc_featurizer_new(const char *encoder_id,
                                       const char *detector_id,
                                       const char *models_dir);

// # Safety
// `h` must be NULL or a handle from [`cc_featurizer_new`] not yet freed.
void cc_featurizer_free(struct CcFeaturizer *h);

// Embedding length, or 0 for a NULL handle.
//
// # Safety
// `h` must be NULL or a live featurizer handle.
size_t cc_featurizer_dim(const struct CcFeaturizer *h);

// Embeds the image file at `path` into `out` (capacity `cap` floats).
//
// # Safety
// `h` must be a live featurizer handle, `path` NUL-terminated, `out` writable for `cap` floats.
enum CcStatus cc_featurizer_embed_file(const struct CcFeaturizer *h,
                                       const char *path,
                                       float *out,
                                       size_t cap);

// Embeds a packed RGB8 image (`width * height * 3` bytes, row-major).
//
// # Safety
// `h` must be a live featurizer handle, `rgb` readable for `width * height * 3`
// bytes, `out` writable for `cap` floats.
enum CcStatus cc_featurizer_embed_rgb(const struct CcFeaturizer *h,
                                      const uint8_t *rgb,
                                      uint32_t width,
                                      uint32_t height,
                                      float *out,
                                      size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAPTIONCHECK_H */
