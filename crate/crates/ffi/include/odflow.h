/* C interface for the odflow flow-prediction toolkit. */

#ifndef ODFLOW_H
#define ODFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum OdflowStatus {
  Ok = 0,
  /**
   * A required pointer argument was null.
   */
  NullArgument = 1,
  /**
   * An argument failed to parse or validate.
   */
  InvalidArgument = 2,
  /**
   * Input data failed validation.
   */
  Validation = 3,
  /**
   * File system failure.
   */
  Io = 4,
  /**
   * Model fitting or prediction failure.
   */
  Model = 5,
  /**
   * A panic was caught at the boundary.
   */
  Internal = 6,
} OdflowStatus;

/**
 * Opaque loaded dataset.
 */
typedef struct OdflowDataset OdflowDataset;

/**
 * Opaque trained model.
 */
typedef struct OdflowModel OdflowModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; never freed.
 */
const char *odflow_version(void);

/**
 * Message for the most recent failure on this thread, or null. The
 * pointer stays valid until the next odflow call on the same thread.
 */
const char *odflow_last_error_message(void);

/**
 * Frees a string allocated by this library.
 *
 * # Safety
 * `s` must come from an odflow call that transfers string ownership, and
 * must not be used afterwards.
 */
void odflow_string_free(char *s);

/**
 * Computes NRMSE, SMAPE, and CPC for two nonnegative flow vectors of
 * length `len`.
 *
 * # Safety
 * `y` and `y_hat` must point to `len` readable doubles; the out pointers
 * must be writable.
 */
enum OdflowStatus odflow_metrics(const double *y,
                                 const double *y_hat,
                                 uintptr_t len,
                                 double *out_nrmse,
                                 double *out_smape,
                                 double *out_cpc);

/**
 * Loads and validates the four input tables. `weekly_periods` selects
 * ISO-week period labels; otherwise labels are plain years. On success
 * `out` receives a dataset handle owned by the caller.
 *
 * # Safety
 * Path arguments must be valid NUL-terminated strings; `out` must be
 * writable.
 */
enum OdflowStatus odflow_dataset_load(const char *zones,
                                      const char *hospitals,
                                      const char *flows,
                                      const char *drivetime,
                                      bool weekly_periods,
                                      int32_t window_start_year,
                                      int32_t window_end_year,
                                      struct OdflowDataset **out);

/**
 * Frees a dataset handle.
 *
 * # Safety
 * `ds` must come from this library and must not be used afterwards.
 */
void odflow_dataset_free(struct OdflowDataset *ds);

/**
 * Row counts of a loaded dataset.
 *
 * # Safety
 * `ds` must be a live dataset handle; out pointers must be writable.
 */
enum OdflowStatus odflow_dataset_counts(const struct OdflowDataset *ds,
                                        uintptr_t *out_zones,
                                        uintptr_t *out_hospitals,
                                        uintptr_t *out_flows);

/**
 * Removes all flows of the listed origin zones, producing a new handle.
 *
 * # Safety
 * `ds` must be live; `origins` must point to `n` valid strings; `out`
 * must be writable.
 */
enum OdflowStatus odflow_dataset_exclude_origins(const struct OdflowDataset *ds,
                                                 const char *const *origins,
                                                 uintptr_t n,
                                                 struct OdflowDataset **out);

/**
 * Generates a synthetic city and writes the ingest tables plus ground
 * truth into `out_dir`. `multinomial_samples = 0` selects noiseless
 * flows.
 *
 * # Safety
 * `out_dir` must be a valid NUL-terminated path string.
 */
enum OdflowStatus odflow_synth_generate(uint64_t seed,
                                        uintptr_t n_zones,
                                        uintptr_t n_hospitals,
                                        double beta_per_min,
                                        double theta_size,
                                        double theta_rating,
                                        double theta_occupancy,
                                        double tau_min,
                                        uint64_t multinomial_samples,
                                        const char *out_dir);

/**
 * Fits the named family (`ols`, `gbt`, `mlp`, `deep_gravity`, `hgnn`)
 * with its default configuration on all rows of the dataset.
 *
 * # Safety
 * `ds` must be live; `family` a valid string; `out` writable.
 */
enum OdflowStatus odflow_train(const struct OdflowDataset *ds,
                               const char *family,
                               uint64_t seed,
                               struct OdflowModel **out);

/**
 * Frees a model handle.
 *
 * # Safety
 * `model` must come from this library and must not be used afterwards.
 */
void odflow_model_free(struct OdflowModel *model);

/**
 * Model family tag as an owned string (free with [`odflow_string_free`]).
 *
 * # Safety
 * `model` must be a live model handle.
 */
char *odflow_model_family(const struct OdflowModel *model);

/**
 * Saves a model as self-describing JSON.
 *
 * # Safety
 * `model` must be live; `path` a valid string.
 */
enum OdflowStatus odflow_model_save(const struct OdflowModel *model, const char *path);

/**
 * Loads a model saved by [`odflow_model_save`].
 *
 * # Safety
 * `path` must be a valid string; `out` writable.
 */
enum OdflowStatus odflow_model_load(const char *path, struct OdflowModel **out);

/**
 * Scalar model output for one raw feature vector of length `len`
 * (the canonical 22-feature layout for standard models).
 *
 * # Safety
 * `model` must be live; `features` must point to `len` doubles; `out`
 * writable.
 */
enum OdflowStatus odflow_model_predict_row(const struct OdflowModel *model,
                                           const double *features,
                                           uintptr_t len,
                                           double *out);

/**
 * Predicted shares for every flow row of the dataset, written into
 * `out` (capacity `len`, which must equal the dataset's flow count).
 * Rows follow the dataset's flow order; simplex-objective families
 * return shares summing to 1 per origin.
 *
 * # Safety
 * `model` and `ds` must be live; `out` must hold `len` writable doubles.
 */
enum OdflowStatus odflow_model_predict_dataset(const struct OdflowModel *model,
                                               const struct OdflowDataset *ds,
                                               double *out,
                                               uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ODFLOW_H */
