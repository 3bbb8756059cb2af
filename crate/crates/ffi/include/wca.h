#ifndef WCA_H
#define WCA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Score aggregation, mirroring the `--agg` values of the command line.
typedef enum WcaAggregation {
  WCA_AGGREGATION_WCA = 0,
  WCA_AGGREGATION_AVG = 1,
  WCA_AGGREGATION_MAX = 2,
  WCA_AGGREGATION_LLM = 3,
  WCA_AGGREGATION_CLIP = 4,
  WCA_AGGREGATION_CLIP_E = 5,
  WCA_AGGREGATION_MIXED = 6,
} WcaAggregation;

// Result code of every fallible call.
typedef enum WcaStatus {
  WCA_STATUS_OK = 0,
  WCA_STATUS_NULL_ARGUMENT = 1,
  WCA_STATUS_INVALID_UTF8 = 2,
  WCA_STATUS_DOMAIN = 3,
  WCA_STATUS_DIMENSION = 4,
  WCA_STATUS_CONFIG = 5,
  WCA_STATUS_MISSING_EMBEDDING = 6,
  WCA_STATUS_IO = 7,
  WCA_STATUS_FORMAT = 8,
  WCA_STATUS_INGESTION = 9,
  WCA_STATUS_CACHE_INVALID = 10,
  WCA_STATUS_CONSTRUCTION = 11,
  WCA_STATUS_BUFFER_TOO_SMALL = 12,
  WCA_STATUS_PANIC = 13,
} WcaStatus;

// Class catalog loaded from a description JSON file.
typedef struct WcaCatalog WcaCatalog;

// Embedding store loaded from a WEM1 file.
typedef struct WcaStore WcaStore;

// Run settings for classification and evaluation.
typedef struct WcaConfig {
  enum WcaAggregation aggregation;
  double alpha;
  double beta;
  // Crops per image; 0 means the number stored for the image.
  uintptr_t num_crops;
  uint64_t seed;
  // Used only when `has_lambda` is nonzero.
  double lambda;
  uint8_t has_lambda;
} WcaConfig;

// Summary of a theorem probe.
typedef struct WcaProbeSummary {
  uintptr_t trials;
  uintptr_t violations;
  // Meaningful only when `trials > 0`.
  double max_cos;
  uint64_t worst_seed;
  double linearity_max_err;
} WcaProbeSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Defaults: wca, alpha 0.5, beta 0.9, crops from the store, seed 0.
struct WcaConfig wca_config_default(void);

// Message of the last failed call on this thread; empty if none.
// Valid until the next failing call on the same thread.
const char *wca_last_error_message(void);

// Library version, static storage.
const char *wca_version(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void wca_string_free(char *s);

// Opens a WEM1 file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum WcaStatus wca_store_open(const char *path, struct WcaStore **out);

// # Safety
// `store` must come from [`wca_store_open`] and not be used afterwards. Null is ignored.
void wca_store_free(struct WcaStore *store);

// # Safety
// `store` must be a live handle; `out` writable.
enum WcaStatus wca_store_dim(const struct WcaStore *store, uintptr_t *out);

// # Safety
// `store` must be a live handle; `out` writable.
enum WcaStatus wca_store_len(const struct WcaStore *store, uintptr_t *out);

// Copies the vector stored under `id` into `buf` (`buf_len >= dim`).
//
// # Safety
// `store` live, `id` NUL-terminated, `buf` writable for `buf_len` doubles.
enum WcaStatus wca_store_get(const struct WcaStore *store,
                             const char *id,
                             double *buf,
                             uintptr_t buf_len);

// Loads a description JSON file; `max_descriptions = 0` keeps all.
//
// # Safety
// `path` NUL-terminated; `out` writable.
enum WcaStatus wca_catalog_open(const char *path,
                                uintptr_t max_descriptions,
                                struct WcaCatalog **out);

// # Safety
// `catalog` must come from [`wca_catalog_open`] and not be used afterwards. Null is ignored.
void wca_catalog_free(struct WcaCatalog *catalog);

// # Safety
// `catalog` live; `out` writable.
enum WcaStatus wca_catalog_len(const struct WcaCatalog *catalog, uintptr_t *out);

// Label of class `index`, borrowed for the catalog's lifetime.
//
// # Safety
// `catalog` live; `out` writable.
enum WcaStatus wca_catalog_label(const struct WcaCatalog *catalog,
                                 uintptr_t index,
                                 const char **out);

// Classifies a stored image. Writes one score per class, in catalog
// order, to `scores` (`scores_len >= number of classes`) and the winning
// class index to `predicted`.
//
// # Safety
// Handles live; `image_id` NUL-terminated; `cfg`, `predicted` valid;
// `scores` writable for `scores_len` doubles.
enum WcaStatus wca_classify(const struct WcaStore *store,
                            const struct WcaCatalog *catalog,
                            const struct WcaConfig *cfg,
                            const char *image_id,
                            double *scores,
                            uintptr_t scores_len,
                            uintptr_t *predicted);

// Evaluates a JSONL manifest and returns the accuracy report as JSON.
// Free the string with [`wca_string_free`].
//
// # Safety
// Handles live; `manifest_path` NUL-terminated; `cfg` valid; `json_out` writable.
enum WcaStatus wca_evaluate_json(const struct WcaStore *store,
                                 const struct WcaCatalog *catalog,
                                 const struct WcaConfig *cfg,
                                 const char *manifest_path,
                                 char **json_out);

// Cosine similarity of two `dim`-vectors.
//
// # Safety
// `a`, `b` readable for `dim` doubles; `out` writable.
enum WcaStatus wca_cosine(const double *a, const double *b, uintptr_t dim, double *out);

// Softmax of `n` scores into `out`.
//
// # Safety
// `scores` readable and `out` writable for `n` doubles.
enum WcaStatus wca_softmax(const double *scores, uintptr_t n, double *out);

// `Σ_i Σ_j w_i v_j sims[i][j]` for a row-major `n x m` matrix.
//
// # Safety
// `sims` readable for `n * m` doubles, `w` for `n`, `v` for `m`; `out` writable.
enum WcaStatus wca_weighted_score(const double *sims,
                                  uintptr_t n,
                                  uintptr_t m,
                                  const double *w,
                                  const double *v,
                                  double *out);

// Runs `trials` theorem instances with trial seeds `seed, seed + 1, ...`.
//
// # Safety
// `out` writable.
enum WcaStatus wca_theorem_probe(uint64_t seed,
                                 uintptr_t trials,
                                 uintptr_t d_in,
                                 uintptr_t d_out,
                                 double cos2_max,
                                 struct WcaProbeSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WCA_H */
