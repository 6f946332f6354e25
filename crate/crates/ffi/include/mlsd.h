/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef MLSD_H
#define MLSD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Label scheme selector for [`mlsd_macro_f1`].
 */
typedef enum MlsdScheme {
  /*
   FAVOR, AGAINST, NEITHER; scored on FAVOR and AGAINST.
   */
  MLSD_SCHEME_THREE_WAY = 0,
  /*
   SUPPORT, REFUTE, COMMENT, UNRELATED; all four scored.
   */
  MLSD_SCHEME_FOUR_WAY = 1,
} MlsdScheme;

/*
 Status codes returned by every fallible function.
 */
typedef enum MlsdStatus {
  MLSD_STATUS_OK = 0,
  MLSD_STATUS_NULL_POINTER = 1,
  MLSD_STATUS_INVALID_ARGUMENT = 2,
  MLSD_STATUS_IO = 3,
  MLSD_STATUS_FORMAT = 4,
  MLSD_STATUS_DIM_MISMATCH = 5,
  MLSD_STATUS_NOT_FOUND = 6,
  MLSD_STATUS_NUMERIC = 7,
  MLSD_STATUS_PANIC = 8,
} MlsdStatus;

/*
 Opaque metric model handle (projection plus source/noise head).
 */
typedef struct MlsdModel MlsdModel;

/*
 Opaque embedding store handle.
 */
typedef struct MlsdStore MlsdStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failure on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *mlsd_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *mlsd_version(void);

/*
 Loads an embedding store file into a new handle.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MlsdStatus mlsd_store_load(const char *path, struct MlsdStore **out);

/*
 Releases a store handle. Null is ignored.

 # Safety
 `store` must come from [`mlsd_store_load`] and not be used afterwards.
 */
void mlsd_store_free(struct MlsdStore *store);

/*
 # Safety
 `store` must be a live handle and `out` a valid pointer.
 */
enum MlsdStatus mlsd_store_dim(const struct MlsdStore *store, uintptr_t *out);

/*
 # Safety
 `store` must be a live handle and `out` a valid pointer.
 */
enum MlsdStatus mlsd_store_count(const struct MlsdStore *store, uintptr_t *out);

/*
 Copies the vector of `id` into `out`, which must hold `len == dim` floats.

 # Safety
 `store` must be a live handle and `out` valid for `len` writes.
 */
enum MlsdStatus mlsd_store_get(const struct MlsdStore *store,
                               uint64_t id,
                               float *out,
                               uintptr_t len);

/*
 Cosine similarity of two vectors of length `len`.

 # Safety
 `a` and `b` must be valid for `len` reads and `out` for one write.
 */
enum MlsdStatus mlsd_cosine(const float *a, const float *b, uintptr_t len, double *out);

/*
 Euclidean distance of two vectors of length `len`.

 # Safety
 `a` and `b` must be valid for `len` reads and `out` for one write.
 */
enum MlsdStatus mlsd_euclidean(const float *a, const float *b, uintptr_t len, double *out);

/*
 Loads a metric checkpoint (its JSON manifest path) into a new handle.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MlsdStatus mlsd_model_load(const char *path, struct MlsdModel **out);

/*
 Releases a model handle. Null is ignored.

 # Safety
 `model` must come from [`mlsd_model_load`] and not be used afterwards.
 */
void mlsd_model_free(struct MlsdModel *model);

/*
 # Safety
 `model` must be a live handle and `out` a valid pointer.
 */
enum MlsdStatus mlsd_model_input_dim(const struct MlsdModel *model, uintptr_t *out);

/*
 Probability that the embedding `x` belongs to the source target.

 # Safety
 `model` must be a live handle, `x` valid for `len` reads, `out` for one
 write.
 */
enum MlsdStatus mlsd_model_confidence(const struct MlsdModel *model,
                                      const float *x,
                                      uintptr_t len,
                                      double *out);

/*
 Macro-F1 of predicted against gold class indices (positions in the
 scheme's label order), over the scheme's classes of interest. `scheme`
 is an [`MlsdScheme`] value.

 # Safety
 `predictions` and `gold` must be valid for `len` reads, `out` for one
 write.
 */
enum MlsdStatus mlsd_macro_f1(uint32_t scheme,
                              const uint32_t *predictions,
                              const uint32_t *gold,
                              uintptr_t len,
                              double *out);

/*
 Two-sided paired t-test on `a[i] - b[i]`. `zero_variance` (may be null)
 is set to 1 when the differences are constant.

 # Safety
 `a` and `b` must be valid for `len` reads; `t` and `p` for one write.
 */
enum MlsdStatus mlsd_paired_t_test(const double *a,
                                   const double *b,
                                   uintptr_t len,
                                   double *t,
                                   double *p,
                                   int32_t *zero_variance);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLSD_H */
