#ifndef SPEEDLOSS_H
#define SPEEDLOSS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum SlStatus {
  SL_STATUS_OK = 0,
  SL_STATUS_NULL_POINTER = 1,
  SL_STATUS_INVALID_ARGUMENT = 2,
  SL_STATUS_SHAPE_MISMATCH = 3,
  SL_STATUS_NO_VALID_TARGETS = 4,
  SL_STATUS_DEGENERATE = 5,
  SL_STATUS_UTF8 = 6,
  SL_STATUS_INTERNAL = 7,
  SL_STATUS_PANIC = 8,
} SlStatus;

// Opaque loss configuration.
typedef struct SlLossSpec SlLossSpec;

// Opaque change-point result.
typedef struct SlSegmentation SlSegmentation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *sl_last_error(void);

// Library version as a static NUL-terminated string.
const char *sl_version(void);

// Parses a loss spec from JSON, e.g. `{"kind":"Huber","beta":1.0}`.
// Missing hyperparameters take their defaults.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum SlStatus sl_loss_spec_from_json(const char *json, struct SlLossSpec **out);

// # Safety
// `spec` must come from [`sl_loss_spec_from_json`] or be null.
void sl_loss_spec_free(struct SlLossSpec *spec);

// Evaluates a loss on a `batch x locations x horizon` block stored
// row-major. `mask` may be null (all entries valid); otherwise nonzero marks
// a valid entry. `grad` may be null; otherwise it receives
// d(value)/d(pred) with the same layout.
//
// # Safety
// Arrays must hold `batch * locations * horizon` elements; `value` must be
// writable.
enum SlStatus sl_loss_evaluate(const struct SlLossSpec *spec,
                               const double *pred,
                               const double *target,
                               const uint8_t *mask,
                               size_t batch,
                               size_t locations,
                               size_t horizon,
                               double *value,
                               double *grad);

// Smallest error e with P(error >= e) <= 1 - alpha over `errors`.
//
// # Safety
// `errors` must hold `n` elements; `out` must be writable.
enum SlStatus sl_var_at(const double *errors, size_t n, double alpha, double *out);

// Penalized kernel change-point detection on one series.
//
// # Safety
// `series` must hold `n` elements; `out` must be writable.
enum SlStatus sl_pelt_detect(const double *series,
                             size_t n,
                             double penalty,
                             struct SlSegmentation **out);

// Number of change points in `seg`; 0 for null.
//
// # Safety
// `seg` must be a live handle or null.
size_t sl_segmentation_len(const struct SlSegmentation *seg);

// Change-point indices, ascending; valid while `seg` lives.
//
// # Safety
// `seg` must be a live handle or null.
const size_t *sl_segmentation_indices(const struct SlSegmentation *seg);

// Penalized objective of the optimal segmentation; NaN for null.
//
// # Safety
// `seg` must be a live handle or null.
double sl_segmentation_objective(const struct SlSegmentation *seg);

// # Safety
// `seg` must come from [`sl_pelt_detect`] or be null.
void sl_segmentation_free(struct SlSegmentation *seg);

// Bimodality verdict for one sensor's observed speeds, as a JSON object.
// `config_json` may be null for defaults. Free the result with
// [`sl_string_free`].
//
// # Safety
// `samples` must hold `n` elements; `config_json` must be NUL-terminated or
// null; `out` must be writable.
enum SlStatus sl_bimodality_json(const double *samples,
                                 size_t n,
                                 const char *config_json,
                                 char **out);

// # Safety
// `s` must come from this library or be null.
void sl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPEEDLOSS_H */
