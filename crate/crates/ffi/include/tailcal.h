#ifndef TAILCAL_H
#define TAILCAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TC_OK 0

#define TC_ERR_NULL 1

// Bad argument or incompatible configuration.
#define TC_ERR_INVALID 2

// Unreadable or malformed input, or mismatched sizes.
#define TC_ERR_INPUT 3

// Numerical failure.
#define TC_ERR_NUMERIC 4

#define TC_ERR_PANIC 5

#define TC_METHOD_NONE 0

#define TC_METHOD_CLASS_FREQUENCY 1

#define TC_METHOD_P2P_CE 2

#define TC_METHOD_P2P_LA 3

#define TC_ESTIMATOR_TRAIN_SIDE 0

#define TC_ESTIMATOR_VAL_SIDE 1

#define TC_ESTIMATOR_TRAIN_REWEIGHTED 2

#define TC_ESTIMATOR_AVERAGED 3

#define TC_ESTIMATOR_FREQUENCY 4

// Opaque trained model.
typedef struct TcModel TcModel;

// Opaque estimated prior.
typedef struct TcPrior TcPrior;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, static storage.
const char *tc_version(void);

// Message for the last failure on this thread, or NULL. Valid until the next failing call.
const char *tc_last_error_message(void);

// Numerically stable softmax of `n` scores into `out`.
//
// # Safety
// `z` and `out` must each point to `n` doubles.
int32_t tc_softmax(const double *z, size_t n, double *out);

// Builds a prior from `n` probabilities (floored and renormalized), tagged with the
// estimator and the number of rows it was computed from.
//
// # Safety
// `probs` must point to `n` doubles; `out` must be writable.
int32_t tc_prior_new(const double *probs,
                     size_t n,
                     int32_t estimator,
                     size_t samples,
                     double alpha,
                     struct TcPrior **out);

// Loads a prior.json.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
int32_t tc_prior_load(const char *path, struct TcPrior **out);

// Number of classes, or 0 for a null handle.
//
// # Safety
// `prior` must be null or a live handle.
size_t tc_prior_num_classes(const struct TcPrior *prior);

// Copies the probabilities into `out`, which holds `n` doubles.
//
// # Safety
// `prior` must be a live handle and `out` must point to `n` doubles.
int32_t tc_prior_probs(const struct TcPrior *prior, double *out, size_t n);

// # Safety
// `prior` must be null or a handle not yet freed.
void tc_prior_free(struct TcPrior *prior);

// Corrects a row-major `rows × classes` logit block into `out`.
// `target` may be null for the uniform prior. `alpha < 0` means the prior's own α.
//
// # Safety
// `logits` and `out` must point to `rows * classes` doubles, `target` to `classes` doubles
// when non-null, and `prior` must be a live handle unless `method` is `TC_METHOD_NONE`.
int32_t tc_adjust_logits(const double *logits,
                         size_t rows,
                         size_t classes,
                         int32_t method,
                         const struct TcPrior *prior,
                         const double *target,
                         double alpha,
                         double *out);

// Loads a model.json.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
int32_t tc_model_load(const char *path, struct TcModel **out);

// # Safety
// `model` must be null or a live handle.
size_t tc_model_num_classes(const struct TcModel *model);

// # Safety
// `model` must be null or a live handle.
size_t tc_model_dims(const struct TcModel *model);

// Logits for a row-major `rows × dims` feature block; `out` holds `rows × classes`.
//
// # Safety
// `model` must be a live handle and the buffers must have the stated sizes.
int32_t tc_model_predict_logits(const struct TcModel *model,
                                const double *features,
                                size_t rows,
                                size_t dims,
                                double *out);

// # Safety
// `model` must be null or a handle not yet freed.
void tc_model_free(struct TcModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAILCAL_H */
