#ifndef SFHEAD_H
#define SFHEAD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Backbone/recipe preset for model construction.
 */
typedef enum SfProfile {
  /**
   * Two-block backbone, 30-epoch recipe.
   */
  SfheadProfileTiny = 0,
  /**
   * Ten-block backbone, 90-epoch recipe.
   */
  SfheadProfilePaper = 1,
} SfProfile;

/**
 * Result code of every fallible call in this API.
 */
typedef enum SfStatus {
  /**
   * Success.
   */
  SfheadOk = 0,
  /**
   * A required pointer argument was null.
   */
  SfheadNullArgument = 1,
  /**
   * An argument value was rejected.
   */
  SfheadInvalidArgument = 2,
  /**
   * File input/output failed.
   */
  SfheadIoError = 3,
  /**
   * The operation itself failed.
   */
  SfheadRuntimeError = 4,
} SfStatus;

/**
 * Opaque dataset handle: samples, labels, and the skeleton graph.
 */
typedef struct SfDataset SfDataset;

/**
 * Opaque model handle: backbone plus auxiliary head.
 */
typedef struct SfModel SfModel;

/**
 * Copy the message of the most recent failure on this thread into `buf`
 * (NUL-terminated, truncated to `cap`). Returns the full length of the
 * message including the terminator; call with a null `buf` to size a buffer.
 */
uintptr_t sfhead_last_error(char *buf, uintptr_t cap);

/**
 * Generate the built-in 4-class synthetic benchmark deterministically.
 *
 * # Safety
 * `out` must be a valid pointer; the result must be released with
 * `sfhead_dataset_free`.
 */
enum SfStatus sfhead_dataset_generate(uintptr_t samples_per_class,
                                      uintptr_t t_target,
                                      uint64_t seed,
                                      struct SfDataset **out);

/**
 * Load a dataset directory (manifest.json + data.bin).
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SfStatus sfhead_dataset_load(const char *dir, struct SfDataset **out);

/**
 * Write a dataset to a directory.
 *
 * # Safety
 * `ds` must come from this API; `dir` must be a NUL-terminated string.
 */
enum SfStatus sfhead_dataset_save(const struct SfDataset *ds, const char *dir);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or come from this API.
 */
uintptr_t sfhead_dataset_len(const struct SfDataset *ds);

/**
 * Release a dataset handle. Null is a no-op.
 *
 * # Safety
 * `ds` must be null or an unreleased handle from this API.
 */
void sfhead_dataset_free(struct SfDataset *ds);

/**
 * Create a model for the dataset's class count and skeleton.
 *
 * # Safety
 * `ds` must come from this API and `out` be valid; release the result with
 * `sfhead_model_free`.
 */
enum SfStatus sfhead_model_new(const struct SfDataset *ds,
                               enum SfProfile profile,
                               uint64_t seed,
                               struct SfModel **out);

/**
 * Release a model handle. Null is a no-op.
 *
 * # Safety
 * `m` must be null or an unreleased handle from this API.
 */
void sfhead_model_free(struct SfModel *m);

/**
 * Trainable parameter count of the auxiliary head; 0 for a null handle.
 *
 * # Safety
 * `m` must be null or come from this API.
 */
uintptr_t sfhead_model_head_param_count(const struct SfModel *m);

/**
 * Trainable parameter count of the backbone; 0 for a null handle.
 *
 * # Safety
 * `m` must be null or come from this API.
 */
uintptr_t sfhead_model_backbone_param_count(const struct SfModel *m);

/**
 * Serialize the model; `include_head` false writes a backbone-only
 * (inference) checkpoint.
 *
 * # Safety
 * `m` must come from this API; `path` must be a NUL-terminated string.
 */
enum SfStatus sfhead_model_save(const struct SfModel *m, const char *path, bool include_head);

/**
 * Load a checkpoint into a model of matching architecture.
 *
 * # Safety
 * `m` must come from this API; `path` must be a NUL-terminated string.
 */
enum SfStatus sfhead_model_load(struct SfModel *m, const char *path);

/**
 * Train in place with the profile's recipe; `epochs` 0 keeps the profile
 * default. On success writes the final validation accuracy (percent) through
 * `out_val_acc` when it is non-null.
 *
 * # Safety
 * `m` and `ds` must come from this API; `out_val_acc` may be null.
 */
enum SfStatus sfhead_train(struct SfModel *m,
                           const struct SfDataset *ds,
                           uint32_t epochs,
                           uint64_t seed,
                           double *out_val_acc);

/**
 * Eval-mode accuracy (percent) over a whole dataset.
 *
 * # Safety
 * `m` and `ds` must come from this API; `out_accuracy` must be valid.
 */
enum SfStatus sfhead_evaluate(const struct SfModel *m,
                              const struct SfDataset *ds,
                              double *out_accuracy);

/**
 * Classify one skeleton sequence laid out as coords[channel][frame][joint]
 * with 3 channels.
 *
 * # Safety
 * `m` must come from this API; `coords` must point to `3 * frames * joints`
 * floats; `out_label` must be valid.
 */
enum SfStatus sfhead_predict(const struct SfModel *m,
                             const float *coords,
                             uintptr_t frames,
                             uintptr_t joints,
                             uint32_t *out_label);

/**
 * Run the 64-bit gradient verification suite; returns OK only if every
 * check passes.
 */
enum SfStatus sfhead_gradcheck(uint64_t seed, uintptr_t instances);

#endif /* SFHEAD_H */
