/*
 * oneshot: metric-learning toolkit for one-shot plastic-waste classification.
 *
 * C API of the shared library. All objects are opaque handles owned by the
 * library; every function that can fail returns a status code and leaves a
 * human-readable message in oneshot_last_error() (thread-local).
 */
#ifndef ONESHOT_H
#define ONESHOT_H

#include <stdint.h>

#if defined _WIN32 || defined __CYGWIN__
#define ONESHOT_API __declspec(dllexport)
#else
#define ONESHOT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct oneshot_dataset oneshot_dataset;
typedef struct oneshot_model oneshot_model;

/* Status codes double as CLI exit codes. */
typedef enum oneshot_status {
    ONESHOT_OK = 0,
    ONESHOT_ERR_INTERNAL = 1,
    ONESHOT_ERR_CONFIG = 2, /* invalid arguments, config, shapes */
    ONESHOT_ERR_NUMERIC = 3, /* training divergence */
    ONESHOT_ERR_IO = 4       /* file system, codecs, formats */
} oneshot_status;

ONESHOT_API const char* oneshot_version(void);

/* Message for the most recent failure on this thread; never NULL. */
ONESHOT_API const char* oneshot_last_error(void);

/* -- datasets ------------------------------------------------------------- */

/* Image tree with 01_PET/02_PEHD/05_PP/06_PS/07_OTHER subdirectories (or
 * resin-code-prefixed files directly under root). */
ONESHOT_API oneshot_status oneshot_dataset_load(const char* root, oneshot_dataset** out);

/* Deterministic synthetic dataset: per_class images for each of the five
 * categories. */
ONESHOT_API oneshot_status oneshot_dataset_synthetic(uint64_t seed, uint32_t per_class, oneshot_dataset** out);

/* Writes the dataset as grayscale PNGs in the canonical directory layout. */
ONESHOT_API oneshot_status oneshot_dataset_materialize(const oneshot_dataset* ds, const char* root);

/* Stratified split; every category keeps one image per side when possible. */
ONESHOT_API oneshot_status oneshot_dataset_split(const oneshot_dataset* ds, double test_fraction, uint64_t seed,
                                                 oneshot_dataset** train_out, oneshot_dataset** test_out);

ONESHOT_API uint32_t oneshot_dataset_size(const oneshot_dataset* ds);

/* "<n> images (PET: a, PE-HD: b, ...)"; caller frees with oneshot_string_free. */
ONESHOT_API oneshot_status oneshot_dataset_stats(const oneshot_dataset* ds, char** out);

ONESHOT_API void oneshot_dataset_free(oneshot_dataset* ds);

/* -- training ------------------------------------------------------------- */

/* Per-epoch progress record, one JSON object per call. */
typedef void (*oneshot_progress_fn)(const char* json_line, void* user);

/* config_json keys (all optional): mode, epochs, instances_per_epoch,
 * batch_size, lr, momentum, margin, seed. Unknown keys are rejected. */
ONESHOT_API oneshot_status oneshot_train(const oneshot_dataset* ds, const char* config_json,
                                         oneshot_progress_fn progress, void* user, oneshot_model** out);

/* -- models / checkpoints -------------------------------------------------- */

ONESHOT_API oneshot_status oneshot_model_save(const oneshot_model* m, const char* path);
ONESHOT_API oneshot_status oneshot_model_load(const char* path, oneshot_model** out);
ONESHOT_API const char* oneshot_model_mode(const oneshot_model* m); /* "siamese" | "triplet" */
ONESHOT_API void oneshot_model_free(oneshot_model* m);

/* -- evaluation ------------------------------------------------------------ */

/* 1-shot N-way episodic accuracy; report is a JSON document. */
ONESHOT_API oneshot_status oneshot_eval_one_shot(const oneshot_model* m, const oneshot_dataset* ds,
                                                 uint32_t episodes, uint64_t seed, char** report_json);

/* Leave-one-out KNN over stored embeddings, k in {3,5,7}. */
ONESHOT_API oneshot_status oneshot_eval_knn(const oneshot_model* m, const oneshot_dataset* ds, uint32_t k,
                                            char** report_json);

/* Plain-text table rendering of a report produced by the functions above. */
ONESHOT_API oneshot_status oneshot_report_render(const char* report_json, char** table);

/* Embeds the dataset with the model's head and writes an OSEM file. */
ONESHOT_API oneshot_status oneshot_export_embeddings(const oneshot_model* m, const oneshot_dataset* ds,
                                                     const char* path);

ONESHOT_API void oneshot_string_free(char* s);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* ONESHOT_H */
