#ifndef DIVE_H
#define DIVE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. The first four match the `dive` binary's exit codes.
typedef enum DiveStatus {
  DIVE_STATUS_OK = 0,
  DIVE_STATUS_INTERNAL = 1,
  DIVE_STATUS_CONFIG = 2,
  DIVE_STATUS_MISSING_ARTIFACT = 3,
  DIVE_STATUS_NULL_ARGUMENT = 4,
  DIVE_STATUS_BUFFER_TOO_SMALL = 5,
  DIVE_STATUS_PANIC = 6,
} DiveStatus;

typedef enum DiveMethod {
  DIVE_METHOD_DIVE = 0,
  DIVE_METHOD_DIVE_MINUS = 1,
  DIVE_METHOD_XGEM_PLUS = 2,
  DIVE_METHOD_RANDOM_MASKS = 3,
  DIVE_METHOD_FISHER_CHUNKS = 4,
  DIVE_METHOD_FISHER_SPECTRAL = 5,
} DiveMethod;

// Counterfactuals for one input.
typedef struct DiveExplanation DiveExplanation;

// Trained classifier and generators loaded from an output directory.
typedef struct DiveModels DiveModels;

// Search hyperparameters. Fill with [`dive_engine_params_default`].
typedef struct DiveEngineParams {
  enum DiveMethod method;
  size_t n;
  double lambda;
  double alpha;
  double gamma;
  double lr;
  size_t tau;
  double delta;
} DiveEngineParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *dive_version(void);

// Copy the calling thread's last error message into `buf` (NUL-terminated,
// truncated to fit). Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t dive_last_error_message(char *buf, size_t len);

// Default search hyperparameters.
//
// # Safety
// `out` must be null or point to a writable `DiveEngineParams`.
enum DiveStatus dive_engine_params_default(struct DiveEngineParams *out);

// Load the classifier and the generator `method` runs on from a `dive`
// output directory. Fisher methods also load (or compute and cache) the
// Fisher estimate.
//
// # Safety
// `out_dir` must be a NUL-terminated UTF-8 path; `out` must be writable.
enum DiveStatus dive_models_load(const char *out_dir,
                                 enum DiveMethod method,
                                 struct DiveModels **out);

// # Safety
// `models` must be null or a handle from [`dive_models_load`] not yet freed.
void dive_models_free(struct DiveModels *models);

// Classifier probability for one flattened image of `len` pixels.
//
// # Safety
// `models` must be a live handle, `image` must hold `len` doubles and
// `prob` must be writable.
enum DiveStatus dive_classifier_predict(const struct DiveModels *models,
                                        const double *image,
                                        size_t len,
                                        double *prob);

// Search for counterfactuals of one image.
//
// # Safety
// `models` must be a live handle, `image` must hold `len` doubles, `params`
// must be readable and `out` writable.
enum DiveStatus dive_explain(const struct DiveModels *models,
                             const double *image,
                             size_t len,
                             const struct DiveEngineParams *params,
                             uint64_t seed,
                             struct DiveExplanation **out);

// # Safety
// `ex` must be null or a handle from [`dive_explain`] not yet freed.
void dive_explanation_free(struct DiveExplanation *ex);

// Number of counterfactuals, or 0 for a null handle.
//
// # Safety
// `ex` must be null or a live handle.
size_t dive_explanation_count(const struct DiveExplanation *ex);

// Pixels per counterfactual image, or 0 for a null handle.
//
// # Safety
// `ex` must be null or a live handle.
size_t dive_explanation_pixels(const struct DiveExplanation *ex);

// Optimisation steps taken.
//
// # Safety
// `ex` must be null or a live handle.
size_t dive_explanation_steps(const struct DiveExplanation *ex);

// Copy counterfactual `i` into `buf` (at least [`dive_explanation_pixels`]
// doubles).
//
// # Safety
// `ex` must be a live handle and `buf` must hold `len` writable doubles.
enum DiveStatus dive_explanation_counterfactual(const struct DiveExplanation *ex,
                                                size_t i,
                                                double *buf,
                                                size_t len);

// Classifier output on counterfactual `i` and whether it flips the decision.
//
// # Safety
// `ex` must be a live handle; `prob` and `valid` must be writable.
enum DiveStatus dive_explanation_outcome(const struct DiveExplanation *ex,
                                         size_t i,
                                         double *prob,
                                         bool *valid);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIVE_H */
