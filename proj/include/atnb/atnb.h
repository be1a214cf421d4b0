/* C interface to the atnb inference and profiling core.
 *
 * Every object is an opaque handle released by its matching *_free function.
 * Calls return ATNB_OK or an error code; the message for the most recent
 * failure on the calling thread is available from atnb_last_error(). Strings
 * returned through char** are heap allocated and released with
 * atnb_string_free().
 */
#ifndef ATNB_H
#define ATNB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(ATNB_BUILDING)
#    define ATNB_API __declspec(dllexport)
#  else
#    define ATNB_API __declspec(dllimport)
#  endif
#else
#  define ATNB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum atnb_status {
  ATNB_OK = 0,
  ATNB_ERR_ARGUMENT = 1,  /* null handle or pointer, index out of range */
  ATNB_ERR_CONFIG = 2,
  ATNB_ERR_SHAPE = 3,
  ATNB_ERR_DOMAIN = 4,
  ATNB_ERR_IO = 5,
  ATNB_ERR_INVARIANT = 6,
  ATNB_ERR_MEMORY = 7,
  ATNB_ERR_INTERNAL = 8
} atnb_status;

typedef struct atnb_config atnb_config;
typedef struct atnb_model atnb_model;
typedef struct atnb_report atnb_report;
typedef struct atnb_prune_result atnb_prune_result;
typedef struct atnb_verify_result atnb_verify_result;

ATNB_API const char* atnb_version(void);
ATNB_API const char* atnb_status_name(atnb_status status);
/* Empty string when the last call on this thread succeeded. */
ATNB_API const char* atnb_last_error(void);
ATNB_API void atnb_string_free(char* text);

/* ---- configs ---------------------------------------------------------- */

/* "conformer-m" or "allattention-lm". */
ATNB_API atnb_status atnb_config_preset(const char* name, atnb_config** out);
ATNB_API atnb_status atnb_config_load(const char* path, atnb_config** out);
ATNB_API atnb_status atnb_config_parse(const char* text, atnb_config** out);
ATNB_API atnb_status atnb_config_clone(const atnb_config* config, atnb_config** out);
/* "AxB" or a group list such as "0-3,4-15"; NULL or "" removes the schedule. */
ATNB_API atnb_status atnb_config_set_reuse(atnb_config* config, const char* schedule);
ATNB_API atnb_status atnb_config_set_seed(atnb_config* config, uint64_t seed);
/* Integer fields by config key: num_layers, dim, heads, ff_mult, conv_kernel,
 * persistent_slots, value_mult, seed. */
ATNB_API atnb_status atnb_config_get(const atnb_config* config, const char* key, int64_t* value);
/* Reuse schedule text, "" for none. */
ATNB_API atnb_status atnb_config_reuse(const atnb_config* config, char** out);
/* Short label such as "conformer-L16-d256-H4". */
ATNB_API atnb_status atnb_config_describe(const atnb_config* config, char** out);
ATNB_API atnb_status atnb_config_dump(const atnb_config* config, char** out);
ATNB_API void atnb_config_free(atnb_config* config);

/* ---- models ----------------------------------------------------------- */

/* Fresh weights from config.seed; a config with a reuse schedule yields the
 * widened reuse model. */
ATNB_API atnb_status atnb_model_create(const atnb_config* config, atnb_model** out);
ATNB_API atnb_status atnb_model_load(const char* path, atnb_model** out);
ATNB_API atnb_status atnb_model_save(const atnb_model* model, const char* path);
ATNB_API atnb_status atnb_model_config(const atnb_model* model, atnb_config** out);
/* Heads currently present, summed over layers. */
ATNB_API atnb_status atnb_model_head_count(const atnb_model* model, size_t* heads);

typedef struct atnb_attention_counts {
  size_t maps_computed;
  size_t maps_reused;
} atnb_attention_counts;

/* x and out are row-major length×dim. counts may be NULL. */
ATNB_API atnb_status atnb_model_forward(const atnb_model* model, const float* x, size_t length,
                                        size_t dim, int threads, float* out,
                                        atnb_attention_counts* counts);
/* Removes round(fraction·H) heads from every layer, highest indices first. */
ATNB_API atnb_status atnb_model_prune_uniform(const atnb_model* model, double fraction,
                                              atnb_model** out);
ATNB_API void atnb_model_free(atnb_model* model);

/* ---- parameter counts ---------------------------------------------------- */

typedef enum atnb_category {
  ATNB_CAT_FF = 0,
  ATNB_CAT_SA = 1,
  ATNB_CAT_CONV = 2,
  ATNB_CAT_LN = 3,
  ATNB_CAT_PERSISTENT_MEMORY = 4,
  ATNB_CATEGORY_COUNT = 5
} atnb_category;

typedef struct atnb_param_counts {
  uint64_t weights[ATNB_CATEGORY_COUNT];
  uint64_t biases[ATNB_CATEGORY_COUNT];  /* linear biases and LN offsets */
} atnb_param_counts;

ATNB_API const char* atnb_category_name(atnb_category category);
/* From shapes alone, applying the config's reuse schedule. */
ATNB_API atnb_status atnb_config_count_params(const atnb_config* config, atnb_param_counts* out);
/* Scalars actually held by the model. */
ATNB_API atnb_status atnb_model_count_params(const atnb_model* model, atnb_param_counts* out);

/* ---- latency ----------------------------------------------------------- */

typedef struct atnb_bench_options {
  const int* lengths;
  size_t length_count;
  int repeats;  /* >= 5 */
  int warmup;   /* >= 1 */
  int threads;
  uint64_t seed;
  const char* label;  /* report config label; NULL derives one from the model */
} atnb_bench_options;

ATNB_API atnb_bench_options atnb_bench_defaults(void);
/* Total forward latency per length. */
ATNB_API atnb_status atnb_bench(const atnb_model* model, const atnb_bench_options* options,
                                atnb_report** out);
/* Per-submodule latency plus an un-instrumented total per length. */
ATNB_API atnb_status atnb_breakdown(const atnb_model* model, const atnb_bench_options* options,
                                    atnb_report** out);

typedef struct atnb_latency_row {
  int length;
  const char* submodule;  /* FF, Conv, SA, ReuseSA, Norm or total */
  double median_ms;
  double iqr_ms;
  int repeats;
  int warmup;
  const char* error;  /* "" unless this length failed */
} atnb_latency_row;

ATNB_API size_t atnb_report_row_count(const atnb_report* report);
/* Strings in row stay valid until the report is freed. */
ATNB_API atnb_status atnb_report_row(const atnb_report* report, size_t index, atnb_latency_row* row);
ATNB_API atnb_status atnb_report_csv(const atnb_report* report, char** out);
ATNB_API atnb_status atnb_report_json(const atnb_report* report, char** out);
ATNB_API const char* atnb_latency_csv_header(void);
ATNB_API void atnb_report_free(atnb_report* report);

/* ---- head pruning ------------------------------------------------------ */

typedef struct atnb_prune_options {
  double lambda;
  int steps;
  double learning_rate;
  double temperature;    /* BinConcrete beta */
  double initial_logit;  /* starting log_alpha for every gate */
  double fd_step;
  uint64_t seed;
  int task_batch;
  int task_length;
} atnb_prune_options;

ATNB_API atnb_prune_options atnb_prune_defaults(void);
/* Trains gates on the self-distillation task, then removes closed heads. */
ATNB_API atnb_status atnb_prune(const atnb_model* model, const atnb_prune_options* options,
                                atnb_prune_result** out);

typedef struct atnb_prune_step {
  int step;
  double sparsity_loss;
  int open_gates;
  double task_loss;
} atnb_prune_step;

ATNB_API size_t atnb_prune_step_count(const atnb_prune_result* result);
ATNB_API atnb_status atnb_prune_step_at(const atnb_prune_result* result, size_t index,
                                        atnb_prune_step* step);
ATNB_API size_t atnb_prune_layer_count(const atnb_prune_result* result);
/* Closed heads in each layer; counts must hold atnb_prune_layer_count entries. */
ATNB_API atnb_status atnb_prune_layer_pruned(const atnb_prune_result* result, int* counts);
/* Pruned heads over all heads, in [0, 1]. */
ATNB_API atnb_status atnb_prune_sparsity(const atnb_prune_result* result, double* ratio);
ATNB_API atnb_status atnb_prune_model(const atnb_prune_result* result, atnb_model** out);
ATNB_API void atnb_prune_result_free(atnb_prune_result* result);

ATNB_API atnb_status atnb_sparsity_ratio(size_t pruned, size_t total, double* ratio);

/* ---- verification ------------------------------------------------------ */

ATNB_API atnb_status atnb_verify(const atnb_config* config, uint64_t seed,
                                 atnb_verify_result** out);
ATNB_API size_t atnb_verify_count(const atnb_verify_result* result);
ATNB_API atnb_status atnb_verify_check(const atnb_verify_result* result, size_t index,
                                       const char** name, int* passed, const char** detail);
ATNB_API int atnb_verify_all_passed(const atnb_verify_result* result);
ATNB_API void atnb_verify_result_free(atnb_verify_result* result);

/* ---- helpers ----------------------------------------------------------- */

/* "128,256", "128..1024" (steps of 128) or "128..1024:x2" (doubling). Writes at
 * most capacity values; count receives the full number. */
ATNB_API atnb_status atnb_parse_lengths(const char* text, int* lengths, size_t capacity,
                                        size_t* count);

#ifdef __cplusplus
}
#endif

#endif /* ATNB_H */
