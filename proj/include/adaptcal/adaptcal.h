/* Stable C interface to the adaptcal library.
 *
 * Every function returns an adaptcal_status. On failure a human-readable
 * message for the calling thread is available from adaptcal_last_error().
 * Strings returned through out-parameters are owned by the caller and must
 * be released with adaptcal_string_free(). Handles are released with their
 * matching *_free function; passing NULL to any *_free is a no-op.
 */
#ifndef ADAPTCAL_H
#define ADAPTCAL_H

#include <stddef.h>

#if defined(_WIN32)
#define ADAPTCAL_API __declspec(dllexport)
#else
#define ADAPTCAL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum adaptcal_status {
  ADAPTCAL_OK = 0,
  ADAPTCAL_ERR_INTERNAL = 1,
  ADAPTCAL_ERR_CONFIG = 2,
  ADAPTCAL_ERR_DATA = 3,
  ADAPTCAL_ERR_DIVERGENCE = 4,
  ADAPTCAL_ERR_MISSING_ARTIFACT = 5,
  ADAPTCAL_ERR_CONTRACT = 6,
  ADAPTCAL_ERR_IO = 7,
  ADAPTCAL_ERR_INVALID_ARGUMENT = 8
} adaptcal_status;

typedef enum adaptcal_sweep_kind {
  ADAPTCAL_SWEEP_COVERAGE_LEVELS = 0,
  ADAPTCAL_SWEEP_SPLIT_RATIOS = 1,
  ADAPTCAL_SWEEP_GRID_VS_QUANTILE = 2
} adaptcal_sweep_kind;

typedef struct adaptcal_config adaptcal_config;
typedef struct adaptcal_model adaptcal_model;
typedef struct adaptcal_table adaptcal_table;

ADAPTCAL_API const char* adaptcal_version(void);
ADAPTCAL_API const char* adaptcal_last_error(void);
ADAPTCAL_API const char* adaptcal_status_name(adaptcal_status status);
ADAPTCAL_API void adaptcal_string_free(char* s);

/* Configuration */
ADAPTCAL_API adaptcal_status adaptcal_config_default(adaptcal_config** out);
ADAPTCAL_API adaptcal_status adaptcal_config_load(const char* path, adaptcal_config** out);
ADAPTCAL_API adaptcal_status adaptcal_config_parse(const char* json, adaptcal_config** out);
ADAPTCAL_API void adaptcal_config_free(adaptcal_config* cfg);
ADAPTCAL_API adaptcal_status adaptcal_config_set(adaptcal_config* cfg, const char* dotted_key,
                                                 const char* value);
ADAPTCAL_API adaptcal_status adaptcal_config_set_seed(adaptcal_config* cfg, unsigned long long seed);
ADAPTCAL_API adaptcal_status adaptcal_config_set_output_dir(adaptcal_config* cfg, const char* dir);
ADAPTCAL_API adaptcal_status adaptcal_config_output_dir(const adaptcal_config* cfg, char** out);
ADAPTCAL_API adaptcal_status adaptcal_config_to_json(const adaptcal_config* cfg, char** out);

/* Subcommands. Artifacts are read from and written to the configured output
 * directory. `out_path` / `out_text` may be NULL when not needed. */
ADAPTCAL_API adaptcal_status adaptcal_generate(const adaptcal_config* cfg, int force, char** out_path);
ADAPTCAL_API adaptcal_status adaptcal_train(const adaptcal_config* cfg, char** out_summary_json);
ADAPTCAL_API adaptcal_status adaptcal_calibrate(const adaptcal_config* cfg, size_t* out_missing_cells);
ADAPTCAL_API adaptcal_status adaptcal_evaluate(const adaptcal_config* cfg, char** out_summary);
ADAPTCAL_API adaptcal_status adaptcal_sweep(const adaptcal_config* cfg, adaptcal_sweep_kind kind,
                                            char** out_path);
ADAPTCAL_API adaptcal_status adaptcal_sweep_from_name(const char* name, adaptcal_sweep_kind* out);
ADAPTCAL_API adaptcal_status adaptcal_compare(const char* const* report_paths, size_t count,
                                              const char* out_path, char** out_text);

/* Trained model */
ADAPTCAL_API adaptcal_status adaptcal_model_load(const char* path, adaptcal_model** out);
ADAPTCAL_API void adaptcal_model_free(adaptcal_model* model);
ADAPTCAL_API adaptcal_status adaptcal_model_dims(const adaptcal_model* model, size_t* nodes,
                                                 size_t* input_steps, size_t* horizon);
/* `input` is node-major [nodes x input_steps]; outputs are node-major
 * [nodes x horizon] buffers. Quantile crossings are repaired per cell. */
ADAPTCAL_API adaptcal_status adaptcal_model_predict(const adaptcal_model* model, const double* input,
                                                    double* lower, double* point, double* upper);

/* Calibration table */
ADAPTCAL_API adaptcal_status adaptcal_table_load(const char* path, adaptcal_table** out);
ADAPTCAL_API void adaptcal_table_free(adaptcal_table* table);
ADAPTCAL_API adaptcal_status adaptcal_table_dims(const adaptcal_table* table, size_t* nodes,
                                                 size_t* horizon);
/* Sets *present to 0 for cells without an entry. */
ADAPTCAL_API adaptcal_status adaptcal_table_lookup(const adaptcal_table* table, size_t node,
                                                   size_t horizon, int* present, double* delta);
/* Widens node-major [nodes x horizon] bounds in place; absent cells are left
 * unchanged. */
ADAPTCAL_API adaptcal_status adaptcal_table_apply(const adaptcal_table* table, double* lower,
                                                  double* upper);

ADAPTCAL_API adaptcal_status adaptcal_pinball_loss(double y, double y_hat, double q, double* out);

#ifdef __cplusplus
}
#endif

#endif /* ADAPTCAL_H */
