#ifndef FSGCD_FSGCD_H
#define FSGCD_FSGCD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FSGCD_API __declspec(dllexport)
#else
#define FSGCD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fsgcd_status {
  FSGCD_OK = 0,
  FSGCD_INVALID_ARGUMENT = 1,
  FSGCD_IO = 2,
  FSGCD_FORMAT = 3,
  FSGCD_DEGENERATE = 4,
  FSGCD_SHAPE = 5,
  FSGCD_NON_FINITE = 6,
  FSGCD_INTERNAL = 7
} fsgcd_status;

typedef struct fsgcd_features fsgcd_features;
typedef struct fsgcd_split fsgcd_split;
typedef struct fsgcd_config fsgcd_config;
typedef struct fsgcd_model fsgcd_model;

/* Message for the most recent failure on the calling thread ("" if none). */
FSGCD_API const char* fsgcd_last_error(void);
FSGCD_API const char* fsgcd_version(void);
/* Frees strings returned through char** out-parameters. */
FSGCD_API void fsgcd_string_free(char* s);

/* Features: binary .fsgf or .csv, chosen by extension. */
FSGCD_API fsgcd_status fsgcd_features_load(const char* path, fsgcd_features** out);
FSGCD_API fsgcd_status fsgcd_features_save(const fsgcd_features* f, const char* path);
FSGCD_API fsgcd_status fsgcd_features_synthetic(uint32_t classes, uint32_t samples_per_class, uint32_t dim,
                                                double separation, uint64_t seed, fsgcd_features** out);
/* Loads config "features", or generates them when the config is synthetic. */
FSGCD_API fsgcd_status fsgcd_features_from_config(const fsgcd_config* cfg, fsgcd_features** out);
FSGCD_API size_t fsgcd_features_size(const fsgcd_features* f);
FSGCD_API size_t fsgcd_features_dim(const fsgcd_features* f);
FSGCD_API uint32_t fsgcd_features_class_count(const fsgcd_features* f);
/* Copies row i into out[0..dim). */
FSGCD_API fsgcd_status fsgcd_features_row(const fsgcd_features* f, size_t i, double* out, size_t out_len);
FSGCD_API int32_t fsgcd_features_label(const fsgcd_features* f, size_t i);
FSGCD_API void fsgcd_features_free(fsgcd_features* f);

FSGCD_API fsgcd_status fsgcd_split_generate(const fsgcd_features* f, double c_l, double p_l, uint64_t seed,
                                            fsgcd_split** out);
/* Loads config "split", or generates one from the split.* keys. */
FSGCD_API fsgcd_status fsgcd_split_from_config(const fsgcd_features* f, const fsgcd_config* cfg, fsgcd_split** out);
/* Validated against the feature set it was generated for. */
FSGCD_API fsgcd_status fsgcd_split_load(const fsgcd_features* f, const char* path, fsgcd_split** out);
FSGCD_API fsgcd_status fsgcd_split_save(const fsgcd_split* s, const char* path);
FSGCD_API fsgcd_status fsgcd_split_to_json(const fsgcd_split* s, char** out);
FSGCD_API size_t fsgcd_split_labeled_count(const fsgcd_split* s);
FSGCD_API size_t fsgcd_split_known_class_count(const fsgcd_split* s);
FSGCD_API void fsgcd_split_free(fsgcd_split* s);

/* Starts from built-in defaults with FSGCD_SEED applied. */
FSGCD_API fsgcd_status fsgcd_config_create(fsgcd_config** out);
FSGCD_API fsgcd_status fsgcd_config_apply_preset(fsgcd_config* cfg, const char* name);
FSGCD_API fsgcd_status fsgcd_config_set(fsgcd_config* cfg, const char* key, const char* value);
FSGCD_API fsgcd_status fsgcd_config_load_file(fsgcd_config* cfg, const char* path);
FSGCD_API fsgcd_status fsgcd_config_to_json(const fsgcd_config* cfg, char** out);
FSGCD_API void fsgcd_config_free(fsgcd_config* cfg);

/* Called with a human-readable progress line. */
typedef void (*fsgcd_progress_fn)(const char* message, void* user);

/* Runs both stages. Writes metrics.jsonl (config line first, one line per
   evaluation), train_log.jsonl, best_new.fsgp and final.fsgp into out_dir.
   views may be NULL. */
FSGCD_API fsgcd_status fsgcd_train(const fsgcd_features* features, const fsgcd_features* views,
                                   const fsgcd_split* split, const fsgcd_config* cfg, const char* out_dir,
                                   fsgcd_progress_fn progress, void* user);

FSGCD_API fsgcd_status fsgcd_model_load(const char* path, fsgcd_model** out);
FSGCD_API size_t fsgcd_model_input_dim(const fsgcd_model* m);
/* Writes embed_dim unit-norm floats per input row. */
FSGCD_API fsgcd_status fsgcd_model_encode(const fsgcd_model* m, const double* rows, size_t n, size_t dim,
                                          double* out, size_t out_len);
FSGCD_API size_t fsgcd_model_embed_dim(const fsgcd_model* m);
FSGCD_API void fsgcd_model_free(fsgcd_model* m);

/* Encodes D_u (or every sample when full_set != 0), clusters with k clusters
   (0 = class count) and returns the metrics as a JSON object. */
FSGCD_API fsgcd_status fsgcd_evaluate(const fsgcd_model* m, const fsgcd_features* f, const fsgcd_split* s, size_t k,
                                      uint64_t eval_seed, int full_set, size_t workers, char** out_json);

/* CSV: id, e0..e{E-1}, label, cluster. Same sample set and clustering as
   fsgcd_evaluate. */
FSGCD_API fsgcd_status fsgcd_export_embeddings(const fsgcd_model* m, const fsgcd_features* f, const fsgcd_split* s,
                                               size_t k, uint64_t eval_seed, int full_set, size_t workers,
                                               const char* path);

#ifdef __cplusplus
}
#endif

#endif
