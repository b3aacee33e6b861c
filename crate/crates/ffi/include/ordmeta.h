#ifndef ORDMETA_H
#define ORDMETA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum OmStatus {
  OM_STATUS_OK = 0,
  OM_STATUS_NULL_POINTER = 1,
  OM_STATUS_INVALID_ARGUMENT = 2,
  OM_STATUS_IO = 3,
  OM_STATUS_DATA = 4,
  OM_STATUS_TRAINING = 5,
  OM_STATUS_PANIC = 6,
} OmStatus;

/**
 * Recordings loaded from a dataset directory.
 */
typedef struct OmDataset OmDataset;

/**
 * A stored metamodel.
 */
typedef struct OmMetamodel OmMetamodel;

/**
 * Subject-level predictions, sorted by subject id.
 */
typedef struct OmPredictions OmPredictions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread ("" after a success).
 * The pointer stays valid until the next call on the same thread.
 */
const char *om_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *om_version(void);

/**
 * Loads every series under `dir/series`, with phenotypes from
 * `dir/phenotypes.csv` where listed.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum OmStatus om_dataset_load(const char *dir, struct OmDataset **out);

/**
 * Number of subjects in the dataset.
 *
 * # Safety
 * `ds` must come from `om_dataset_load`; `out` must be writable.
 */
enum OmStatus om_dataset_len(const struct OmDataset *ds, size_t *out);

/**
 * # Safety
 * `ds` must come from `om_dataset_load` (or be null) and not be used again.
 */
void om_dataset_free(struct OmDataset *ds);

/**
 * Loads a metamodel directory (`meta.json` plus `base_<k>.json`).
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum OmStatus om_metamodel_load(const char *dir, struct OmMetamodel **out);

/**
 * Number of thresholds (base models) in the bank.
 *
 * # Safety
 * `m` must come from `om_metamodel_load`; `out` must be writable.
 */
enum OmStatus om_metamodel_threshold_count(const struct OmMetamodel *m, size_t *out);

/**
 * # Safety
 * `m` must come from `om_metamodel_load` (or be null) and not be used again.
 */
void om_metamodel_free(struct OmMetamodel *m);

/**
 * Predicts one score per subject of `ds`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum OmStatus om_metamodel_predict(const struct OmMetamodel *m,
                                   const struct OmDataset *ds,
                                   struct OmPredictions **out);

/**
 * # Safety
 * `p` must come from `om_metamodel_predict`; `out` must be writable.
 */
enum OmStatus om_predictions_len(const struct OmPredictions *p, size_t *out);

/**
 * Row `i`: subject id (borrowed from `p`) and predicted score.
 *
 * # Safety
 * `p` must be live; `id` and `score` must be writable.
 */
enum OmStatus om_predictions_get(const struct OmPredictions *p,
                                 size_t i,
                                 const char **id,
                                 double *score);

/**
 * # Safety
 * `p` must come from `om_metamodel_predict` (or be null) and not be used again.
 */
void om_predictions_free(struct OmPredictions *p);

/**
 * Pearson correlation of two length-`n` arrays.
 *
 * # Safety
 * `x` and `y` must point to `n` doubles; `out` must be writable.
 */
enum OmStatus om_pearson(const double *x, const double *y, size_t n, double *out);

/**
 * t statistic and two-tailed p of a correlation `r` over `n` pairs
 * (df = n − 2).
 *
 * # Safety
 * `t` and `p` must be writable.
 */
enum OmStatus om_corr_significance(double r, size_t n, double *t, double *p);

/**
 * Writes `bits[k] = score > thresholds[k]` for `n` strictly increasing,
 * non-integer thresholds.
 *
 * # Safety
 * `thresholds` must point to `n` doubles and `bits` to `n` writable bytes.
 */
enum OmStatus om_threshold_labels(uint8_t score, const double *thresholds, size_t n, uint8_t *bits);

/**
 * Length of the strict upper triangle of an `rois × rois` matrix.
 */
size_t om_upper_triangle_len(size_t rois);

/**
 * Windows of `length` taken every `stride` rows from `t` rows.
 *
 * # Safety
 * `out` must be writable.
 */
enum OmStatus om_window_count(size_t t, size_t length, size_t stride, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ORDMETA_H */
