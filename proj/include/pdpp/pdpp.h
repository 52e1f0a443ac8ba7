#ifndef PDPP_H
#define PDPP_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define PDPP_API __attribute__((visibility("default")))
#else
#define PDPP_API
#endif

typedef enum pdpp_status {
  PDPP_OK = 0,
  PDPP_ERR_INVALID_ARGUMENT = 1,
  PDPP_ERR_SHAPE = 2,
  PDPP_ERR_IO = 3,
  PDPP_ERR_FORMAT = 4,
  PDPP_ERR_NUMERIC = 5,
  PDPP_ERR_INTERNAL = 6
} pdpp_status;

typedef struct pdpp_dataset pdpp_dataset;
typedef struct pdpp_classifier pdpp_classifier;
typedef struct pdpp_model pdpp_model;

/* Called after every training step. */
typedef void (*pdpp_progress_fn)(int step, double loss, double lr, void* user);

PDPP_API const char* pdpp_version(void);
/* Message of the last failure on this thread ("" when none). */
PDPP_API const char* pdpp_last_error(void);
PDPP_API const char* pdpp_status_name(pdpp_status s);
/* Every char** output is heap allocated and released here. */
PDPP_API void pdpp_free_string(char* s);

/* Datasets. config_json is a synthetic generator config; horizons lists the
   plan lengths to extract windows for. */
PDPP_API pdpp_status pdpp_dataset_generate(const char* config_json, const int* horizons, size_t num_horizons,
                                           double split_ratio, pdpp_dataset** train, pdpp_dataset** test);
PDPP_API pdpp_status pdpp_dataset_load(const char* path, pdpp_dataset** out);
PDPP_API pdpp_status pdpp_dataset_save(const pdpp_dataset* ds, const char* path);
PDPP_API pdpp_status pdpp_dataset_summary(const pdpp_dataset* ds, char** json);
PDPP_API void pdpp_dataset_free(pdpp_dataset* ds);

/* Task classifier. test may be NULL. */
PDPP_API pdpp_status pdpp_classifier_train(const pdpp_dataset* train, const pdpp_dataset* test, const char* config_json,
                                           pdpp_classifier** out, char** report_json);
PDPP_API pdpp_status pdpp_classifier_save(const pdpp_classifier* c, const char* path);
PDPP_API pdpp_status pdpp_classifier_load(const char* path, pdpp_classifier** out);
PDPP_API void pdpp_classifier_free(pdpp_classifier* c);

/* Planning model. train_json is a training config, model_json model options. */
PDPP_API pdpp_status pdpp_model_train(const pdpp_dataset* train, const char* train_json, const char* model_json,
                                      pdpp_progress_fn progress, void* user, pdpp_model** out, char** report_json);
/* Endpoint model predicting {a_1, a_T} for records of the given horizon. */
PDPP_API pdpp_status pdpp_model_train_endpoint(const pdpp_dataset* train, int horizon, const char* train_json,
                                               const char* model_json, pdpp_progress_fn progress, void* user,
                                               pdpp_model** out, char** report_json);
PDPP_API pdpp_status pdpp_model_save(const pdpp_model* m, const char* path);
PDPP_API pdpp_status pdpp_model_load(const char* path, pdpp_model** out);
PDPP_API pdpp_status pdpp_model_info(const pdpp_model* m, char** json);
PDPP_API void pdpp_model_free(pdpp_model* m);

/* Inference. endpoint_model and classifier may be NULL; task_map_source
   supplies the task/action map (NULL = data). eval_json holds sampler and
   evaluation options. */
PDPP_API pdpp_status pdpp_sample(const pdpp_model* model, const pdpp_model* endpoint_model,
                                 const pdpp_classifier* classifier, const pdpp_dataset* data,
                                 const pdpp_dataset* task_map_source, const char* eval_json, char** predictions_tsv);
PDPP_API pdpp_status pdpp_evaluate(const pdpp_model* model, const pdpp_model* endpoint_model,
                                   const pdpp_classifier* classifier, const pdpp_dataset* data,
                                   const pdpp_dataset* task_map_source, const char* eval_json, char** report_text,
                                   char** report_json);
PDPP_API pdpp_status pdpp_evaluate_predictions(const pdpp_dataset* data, const char* predictions_tsv, int miou_batch,
                                               char** report_text, char** report_json);
/* kind: "random" or "retrieval". train is only read by retrieval. */
PDPP_API pdpp_status pdpp_baseline(const pdpp_dataset* train, const pdpp_dataset* test, const char* kind,
                                   uint64_t seed, int task_limited, char** report_text, char** report_json);

/* gen-data -> train-classifier -> train -> sample -> eval. When out_dir is
   set, datasets and checkpoints are written there. */
PDPP_API pdpp_status pdpp_pipeline_run(const char* config_json, const char* out_dir, pdpp_progress_fn progress,
                                       void* user, char** report_text, char** report_json);

#ifdef __cplusplus
}
#endif

#endif
