#ifndef PCPG_H
#define PCPG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PCPG_ABI_VERSION 1

typedef enum {
  PCPG_STATUS_OK = 0,
  PCPG_STATUS_NULL_POINTER = 1,
  PCPG_STATUS_INVALID_ARGUMENT = 2,
  PCPG_STATUS_BUFFER_TOO_SMALL = 3,
  PCPG_STATUS_FORMAT = 4,
  PCPG_STATUS_IO = 5,
  PCPG_STATUS_NON_FINITE = 6,
  PCPG_STATUS_PANIC = 7,
} PcpgStatus;

typedef enum {
  PCPG_DISCOUNT_FROM_END = 0,
  PCPG_DISCOUNT_CONVENTIONAL = 1,
} PcpgDiscount;

typedef enum {
  PCPG_PADDING_ZERO = 0,
  PCPG_PADDING_TRUNCATE = 1,
} PcpgPadding;

/**
 * Opaque window kernel.
 */
typedef struct PcpgKernel PcpgKernel;

/**
 * Opaque trained model.
 */
typedef struct PcpgModel PcpgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

uint32_t pcpg_abi_version(void);

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *pcpg_last_error(void);

/**
 * Levenshtein distance between two token arrays.
 *
 * # Safety
 * `a` and `b` point to `a_len` and `b_len` readable values (or are null
 * with length 0); `out` is writable.
 */
PcpgStatus pcpg_edit_distance(const uint32_t *a,
                              size_t a_len,
                              const uint32_t *b,
                              size_t b_len,
                              size_t *out);

/**
 * Character error rate of `hyp` against a non-empty `reference`.
 *
 * # Safety
 * As for [`pcpg_edit_distance`].
 */
PcpgStatus pcpg_cer(const uint32_t *hyp,
                    size_t hyp_len,
                    const uint32_t *reference,
                    size_t ref_len,
                    double *out);

/**
 * Per-step rewards of a prediction. The prediction is cut after its first
 * `EOS`, so `*written <= pred_len` values are stored in `out`.
 *
 * # Safety
 * `pred` and `reference` are readable for their lengths; `out` is
 * writable for `pred_len` values; `written` is writable.
 */
PcpgStatus pcpg_immediate_rewards(const uint32_t *pred,
                                  size_t pred_len,
                                  const uint32_t *reference,
                                  size_t ref_len,
                                  double *out,
                                  size_t *written);

/**
 * Discounted returns of `len` immediate rewards, written to `out`.
 *
 * # Safety
 * `immediate` is readable and `out` writable for `len` values.
 */
PcpgStatus pcpg_discounted_returns(const double *immediate,
                                   size_t len,
                                   double gamma,
                                   PcpgDiscount mode,
                                   double *out);

/**
 * Creates a kernel of `size` taps and `stride`. `weights` may be null for
 * uniform weights; otherwise it holds `size` positive values, which are
 * normalized to sum to 1.
 *
 * # Safety
 * `weights` is null or readable for `size` values; `out` is writable.
 */
PcpgStatus pcpg_kernel_new(size_t size, size_t stride, const double *weights, PcpgKernel **out);

/**
 * # Safety
 * `kernel` is null or came from [`pcpg_kernel_new`] and is not used again.
 */
void pcpg_kernel_free(PcpgKernel *kernel);

/**
 * Normalized weights, `size` values.
 *
 * # Safety
 * `kernel` is a live handle; `out` is writable for the kernel size.
 */
PcpgStatus pcpg_kernel_weights(const PcpgKernel *kernel, double *out);

/**
 * Windowed policy-gradient loss of one episode: the windows slide over the
 * per-step losses `-returns[u] * log_probs[u]` and their outputs are summed.
 *
 * # Safety
 * `kernel` is a live handle; `returns` and `log_probs` are readable for
 * `len` values; `out` is writable.
 */
PcpgStatus pcpg_kernel_loss(const PcpgKernel *kernel,
                            const double *returns,
                            const double *log_probs,
                            size_t len,
                            PcpgPadding pad,
                            double *out);

/**
 * Weight with which each of `len` per-step losses enters the loss.
 *
 * # Safety
 * `kernel` is a live handle; `out` is writable for `len` values.
 */
PcpgStatus pcpg_kernel_coefficients(const PcpgKernel *kernel,
                                    size_t len,
                                    PcpgPadding pad,
                                    double *out);

/**
 * Loads a checkpoint written by `pcpg train`.
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable.
 */
PcpgStatus pcpg_model_load(const char *path, PcpgModel **out);

/**
 * # Safety
 * `model` is null or came from [`pcpg_model_load`] and is not used again.
 */
void pcpg_model_free(PcpgModel *model);

/**
 * Frame width `F` the model expects.
 *
 * # Safety
 * `model` is a live handle; `out` is writable.
 */
PcpgStatus pcpg_model_feature_dim(const PcpgModel *model, size_t *out);

/**
 * Greedy decode of a `steps x width` row-major frame matrix. Writes the
 * tokens (ending in `EOS` unless `max_len` was hit) and their count. When
 * `capacity` is too small, `*len` holds the needed size and
 * `PcpgStatus::BufferTooSmall` is returned. `log_prob` may be null.
 *
 * # Safety
 * `model` is a live handle; `frames` is readable for `steps * width`
 * values; `tokens` is writable for `capacity` values; `len` is writable.
 */
PcpgStatus pcpg_model_greedy(const PcpgModel *model,
                             const double *frames,
                             size_t steps,
                             size_t width,
                             size_t max_len,
                             uint32_t *tokens,
                             size_t capacity,
                             size_t *len,
                             double *log_prob);

/**
 * Length-normalized beam search; otherwise as [`pcpg_model_greedy`].
 *
 * # Safety
 * As for [`pcpg_model_greedy`].
 */
PcpgStatus pcpg_model_beam(const PcpgModel *model,
                           const double *frames,
                           size_t steps,
                           size_t width,
                           size_t beam_width,
                           size_t max_len,
                           uint32_t *tokens,
                           size_t capacity,
                           size_t *len,
                           double *log_prob);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCPG_H */
