#ifndef LATENTFLOW_H
#define LATENTFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LfStatus {
  LF_STATUS_OK = 0,
  LF_STATUS_NULL_POINTER = 1,
  LF_STATUS_INVALID_ARGUMENT = 2,
  LF_STATUS_SHAPE = 3,
  LF_STATUS_IO = 4,
  LF_STATUS_FORMAT = 5,
  LF_STATUS_UNSUPPORTED = 6,
  LF_STATUS_NUMERIC = 7,
  LF_STATUS_PANIC = 8,
} LfStatus;

// Opaque handle to a loaded model.
typedef struct LfModel LfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *lf_last_error_message(void);

// Loads a checkpoint written by the trainer. On success `*out` owns a new
// handle that must be released with [`lf_model_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum LfStatus lf_model_load(const char *path, struct LfModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from [`lf_model_load`] and not be used afterwards.
void lf_model_free(struct LfModel *model);

// # Safety
// Pointers must be valid.
enum LfStatus lf_model_dims(const struct LfModel *model, size_t *data_dim, size_t *latent_dim);

// Writes 1 to `*out` when the prior is a normalizing flow, else 0.
//
// # Safety
// Pointers must be valid.
enum LfStatus lf_model_has_flow(const struct LfModel *model, int32_t *out);

// Decodes `n` prior samples drawn with `seed` into `out` (`n × data_dim`).
//
// # Safety
// `out` must hold `out_len` doubles.
enum LfStatus lf_model_sample(const struct LfModel *model,
                              size_t n,
                              uint64_t seed,
                              double *out,
                              size_t out_len);

// Posterior means of `n` rows of `x` (`n × data_dim`) into `out`
// (`n × latent_dim`).
//
// # Safety
// Buffers must hold the stated number of doubles.
enum LfStatus lf_model_encode(const struct LfModel *model,
                              const double *x,
                              size_t n,
                              double *out,
                              size_t out_len);

// Decodes `n` latents (`n × latent_dim`) into `out` (`n × data_dim`).
//
// # Safety
// Buffers must hold the stated number of doubles.
enum LfStatus lf_model_decode(const struct LfModel *model,
                              const double *z,
                              size_t n,
                              double *out,
                              size_t out_len);

// Prior log density of each of `n` latents into `out` (`n` values).
// Fails with `UNSUPPORTED` for the adversarial prior.
//
// # Safety
// Buffers must hold the stated number of doubles.
enum LfStatus lf_model_log_prior(const struct LfModel *model,
                                 const double *z,
                                 size_t n,
                                 double *out,
                                 size_t out_len);

// Flow map `Z_T → Z_0` of `n` latents, with per-row log-determinants in
// `logdet` when it is non-null.
//
// # Safety
// Buffers must hold the stated number of doubles.
enum LfStatus lf_flow_forward(const struct LfModel *model,
                              const double *z,
                              size_t n,
                              double *out,
                              size_t out_len,
                              double *logdet,
                              size_t logdet_len);

// Inverse flow map `Z_0 → Z_T` of `n` base points.
//
// # Safety
// Buffers must hold the stated number of doubles.
enum LfStatus lf_flow_inverse(const struct LfModel *model,
                              const double *z0,
                              size_t n,
                              double *out,
                              size_t out_len);

// Fréchet distance between Gaussian fits of two feature sets
// (`na × k` and `nb × k`).
//
// # Safety
// Buffers must hold the stated number of doubles.
enum LfStatus lf_frechet_distance(const double *a,
                                  size_t na,
                                  const double *b,
                                  size_t nb,
                                  size_t k,
                                  double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* LATENTFLOW_H */
