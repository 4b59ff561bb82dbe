#ifndef LLH_H
#define LLH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LlhStatus {
  LLH_STATUS_OK = 0,
  LLH_STATUS_NULL_POINTER = 1,
  LLH_STATUS_INVALID_ARGUMENT = 2,
  LLH_STATUS_IO = 3,
  LLH_STATUS_PARSE = 4,
  LLH_STATUS_RUNTIME = 5,
  LLH_STATUS_PANIC = 6,
} LlhStatus;

/*
 Trained stage-2 predictor.
 */
typedef struct LlhPredictor LlhPredictor;

/*
 Trained stage-1 reconstructor.
 */
typedef struct LlhReconstructor LlhReconstructor;

/*
 Fitted strength law.
 */
typedef struct LlhStrengthLaw LlhStrengthLaw;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL after a
 successful call. Valid until the next call on the same thread.
 */
const char *llh_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *llh_version(void);

/*
 Fits `log sigma = alpha . M` on `n` rows. `minkowski` is row-major
 `n x 4`; `strengths` has `n` positive entries.

 # Safety
 Pointers must be valid for the stated lengths; `out` receives a handle.
 */
enum LlhStatus llh_law_fit(const double *minkowski,
                           const double *strengths,
                           size_t n,
                           struct LlhStrengthLaw **out);

/*
 Loads a strength law from its JSON file.

 # Safety
 `path` is a NUL-terminated string; `out` receives a handle.
 */
enum LlhStatus llh_law_load(const char *path, struct LlhStrengthLaw **out);

/*
 Copies the four fitted coefficients into `alpha`.

 # Safety
 `law` is a live handle; `alpha` holds 4 doubles.
 */
enum LlhStatus llh_law_alpha(const struct LlhStrengthLaw *law, double *alpha);

/*
 Predicted strength for one 4-vector of functionals.

 # Safety
 `law` is a live handle; `m` holds 4 doubles; `sigma` is writable.
 */
enum LlhStatus llh_law_predict(const struct LlhStrengthLaw *law, const double *m, double *sigma);

/*
 # Safety
 `law` is null or a handle not yet freed.
 */
void llh_law_free(struct LlhStrengthLaw *law);

/*
 Loads a reconstructor checkpoint (plain or provenance-stamped JSON).

 # Safety
 `path` is a NUL-terminated string; `out` receives a handle.
 */
enum LlhStatus llh_reconstructor_load(const char *path, struct LlhReconstructor **out);

/*
 Number of grid points the reconstructor expects.

 # Safety
 `r` is a live handle; `width` is writable.
 */
enum LlhStatus llh_reconstructor_width(const struct LlhReconstructor *r, size_t *width);

/*
 Reconstructs one curve. `observed[i]` is nonzero where `values[i]` was
 measured; other entries of `values` are ignored. Observed points are
 copied to `out` unchanged.

 # Safety
 `r` is a live handle; the arrays hold `len` elements.
 */
enum LlhStatus llh_reconstructor_reconstruct(const struct LlhReconstructor *r,
                                             const double *values,
                                             const uint8_t *observed,
                                             size_t len,
                                             double *out);

/*
 # Safety
 `r` is null or a handle not yet freed.
 */
void llh_reconstructor_free(struct LlhReconstructor *r);

/*
 Loads a stage-2 predictor checkpoint.

 # Safety
 `path` is a NUL-terminated string; `out` receives a handle.
 */
enum LlhStatus llh_predictor_load(const char *path, struct LlhPredictor **out);

/*
 Curve length the predictor expects.

 # Safety
 `p` is a live handle; `len` is writable.
 */
enum LlhStatus llh_predictor_curve_len(const struct LlhPredictor *p, size_t *len);

/*
 Predicts M0..M3 for one full curve. `aux` may be NULL (with `aux_len`
 0) unless the predictor was trained with auxiliary features.

 # Safety
 `p` is a live handle; `curve` holds `len` doubles, `aux` holds
 `aux_len` doubles when non-null, `m` holds 4 doubles.
 */
enum LlhStatus llh_predictor_predict(const struct LlhPredictor *p,
                                     const double *curve,
                                     size_t len,
                                     const double *aux,
                                     size_t aux_len,
                                     double *m);

/*
 # Safety
 `p` is null or a handle not yet freed.
 */
void llh_predictor_free(struct LlhPredictor *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LLH_H */
