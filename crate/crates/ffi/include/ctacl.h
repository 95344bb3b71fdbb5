#ifndef CTACL_H
#define CTACL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum {
  CTACL_VARIANT_SSCL = 0,
  CTACL_VARIANT_CTACL = 1,
  CTACL_VARIANT_CTACL_DA = 2,
} CtaclVariant;

typedef enum {
  CTACL_STATUS_OK = 0,
  CTACL_STATUS_NULL_POINTER = 1,
  CTACL_STATUS_INVALID_ARGUMENT = 2,
  CTACL_STATUS_IO = 3,
  CTACL_STATUS_FORMAT = 4,
  CTACL_STATUS_INTEGRITY = 5,
  CTACL_STATUS_NUMERIC = 6,
  CTACL_STATUS_BUFFER_TOO_SMALL = 7,
  CTACL_STATUS_PANIC = 8,
} CtaclStatus;

/**
 * Dataset handle.
 */
typedef struct CtaclDataset CtaclDataset;

/**
 * Encoder handle.
 */
typedef struct CtaclEncoder CtaclEncoder;

typedef struct {
  uint64_t seed;
  uint32_t n_vehicles;
  uint32_t n_cameras;
  uint32_t min_cameras_per_vehicle;
  uint32_t max_cameras_per_vehicle;
  uint32_t min_tracklet_len;
  uint32_t max_tracklet_len;
  size_t d_in;
  double domain_gap_strength;
  double intra_tracklet_noise;
  double tracklet_drift;
  double frame_variation;
} CtaclGenParams;

typedef struct {
  uint64_t seed;
  CtaclVariant variant;
  uint32_t epochs;
  size_t batch_size;
  double base_lr;
  double momentum;
  double tau;
  double lambda;
  double gamma;
  size_t k;
  bool exclude_own_camera;
  uint32_t warmup_epochs;
  uint32_t overhaul_every;
  /**
   * Width of every hidden layer.
   */
  size_t hidden_width;
  size_t hidden_layers;
  size_t embed_dim;
  /**
   * Fraction of vehicles held out when the dataset carries vehicle ids.
   */
  double eval_fraction;
} CtaclTrainParams;

typedef struct {
  double rank1;
  double rank5;
  double rank10;
  double map;
  double camera_probe_accuracy;
  size_t n_queries;
  size_t n_excluded_queries;
} CtaclMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *ctacl_version(void);

/**
 * Message of the last failed call on this thread, empty after a success.
 * Valid until the next call into the library on the same thread.
 */
const char *ctacl_last_error(void);

CtaclGenParams ctacl_gen_params_default(void);

CtaclTrainParams ctacl_train_params_default(void);

/**
 * # Safety
 * `params` must point to a valid struct and `out` to writable storage.
 */
CtaclStatus ctacl_dataset_generate(const CtaclGenParams *params, CtaclDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
CtaclStatus ctacl_dataset_load(const char *path, CtaclDataset **out);

/**
 * Writes the dataset and its JSON sidecar.
 *
 * # Safety
 * `ds` must be a live handle and `path` a NUL-terminated string.
 */
CtaclStatus ctacl_dataset_save(const CtaclDataset *ds, const char *path);

/**
 * Number of samples, 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t ctacl_dataset_len(const CtaclDataset *ds);

/**
 * Input dimension, 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t ctacl_dataset_dim(const CtaclDataset *ds);

/**
 * Number of cameras, 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
uint32_t ctacl_dataset_n_cameras(const CtaclDataset *ds);

/**
 * Copies sample `index` into `out`, which holds `out_len` doubles.
 *
 * # Safety
 * `ds` must be a live handle and `out` valid for `out_len` writes.
 */
CtaclStatus ctacl_dataset_sample(const CtaclDataset *ds, size_t index, double *out, size_t out_len);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void ctacl_dataset_free(CtaclDataset *ds);

/**
 * Fresh encoder with layer widths `dims[0..n_dims]` (input first).
 *
 * # Safety
 * `dims` must be valid for `n_dims` reads and `out` writable.
 */
CtaclStatus ctacl_encoder_init(const size_t *dims,
                               size_t n_dims,
                               uint64_t seed,
                               CtaclEncoder **out);

/**
 * Loads a training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
CtaclStatus ctacl_encoder_load(const char *path, CtaclEncoder **out);

/**
 * Writes the encoder as a checkpoint.
 *
 * # Safety
 * `enc` must be a live handle and `path` a NUL-terminated string.
 */
CtaclStatus ctacl_encoder_save(const CtaclEncoder *enc, const char *path);

/**
 * # Safety
 * `enc` must be null or a live handle.
 */
size_t ctacl_encoder_input_dim(const CtaclEncoder *enc);

/**
 * # Safety
 * `enc` must be null or a live handle.
 */
size_t ctacl_encoder_output_dim(const CtaclEncoder *enc);

/**
 * Embeds `n_rows` row-major inputs of width `in_dim` into `out`, which holds
 * `out_len` doubles (at least `n_rows * output_dim`).
 *
 * # Safety
 * `x` must be valid for `n_rows * in_dim` reads and `out` for `out_len` writes.
 */
CtaclStatus ctacl_encoder_forward(const CtaclEncoder *enc,
                                  const double *x,
                                  size_t n_rows,
                                  size_t in_dim,
                                  double *out,
                                  size_t out_len);

/**
 * # Safety
 * `enc` must be null or a handle not yet freed.
 */
void ctacl_encoder_free(CtaclEncoder *enc);

/**
 * Trains an encoder. When the dataset carries vehicle ids a share of the
 * vehicles is held out, and `metrics_out` (nullable) receives the final held-out
 * evaluation; otherwise training uses every sample and `metrics_out` is zeroed.
 *
 * # Safety
 * `ds` and `params` must be valid, `out` writable, `metrics_out` null or writable.
 */
CtaclStatus ctacl_train(const CtaclDataset *ds,
                        const CtaclTrainParams *params,
                        CtaclEncoder **out,
                        CtaclMetrics *metrics_out);

/**
 * Evaluates on the held-out split a training run with `seed` and
 * `eval_fraction` would use.
 *
 * # Safety
 * `enc` and `ds` must be live handles and `out` writable.
 */
CtaclStatus ctacl_evaluate(const CtaclEncoder *enc,
                           const CtaclDataset *ds,
                           uint64_t seed,
                           double eval_fraction,
                           CtaclMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTACL_H */
