#ifndef NEWSDISTILL_H
#define NEWSDISTILL_H

#include <stddef.h>
#include <stdint.h>

#if defined(NEWSDISTILL_BUILDING)
#define ND_API __attribute__((visibility("default")))
#else
#define ND_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes of the command-line tool. */
typedef enum nd_status {
  ND_OK = 0,
  ND_ERR_CONFIG = 1,   /* usage, invalid or unknown config key, wrong mode */
  ND_ERR_DATA = 2,     /* missing or malformed data files and checkpoints */
  ND_ERR_NUMERIC = 3,  /* NaN/Inf losses, failed gradient audit */
  ND_ERR_INTERNAL = 4  /* broken library invariant */
} nd_status;

typedef struct nd_config nd_config;
typedef struct nd_model nd_model;

/* Message of the last failed call on this thread; "" after a success. */
ND_API const char* nd_last_error(void);
ND_API const char* nd_version(void);

/* Output callback for progress lines; NULL silences. Default: stdout. */
typedef void (*nd_log_fn)(const char* line, void* user);
ND_API void nd_set_log(nd_log_fn fn, void* user);

/* ---- configuration ---- */
ND_API nd_status nd_config_new(nd_config** out);
ND_API nd_status nd_config_load(const char* path, nd_config** out);
ND_API nd_status nd_config_parse(const char* text, nd_config** out);
ND_API nd_status nd_config_set(nd_config* config, const char* key, const char* value);
/* Copies the value (NUL-terminated) into buf when it fits; *needed receives
 * the size including the terminator either way. */
ND_API nd_status nd_config_get(const nd_config* config, const char* key, char* buf, size_t cap, size_t* needed);
ND_API nd_status nd_config_dump(const nd_config* config, char* buf, size_t cap, size_t* needed);
ND_API nd_status nd_config_validate(const nd_config* config);
ND_API void nd_config_free(nd_config* config);

/* ---- commands; artifacts land under the config's out_dir ---- */
ND_API nd_status nd_train(const nd_config* config);
/* data_config may be NULL: the data named by the checkpoint is used. split: "valid" or "test". */
ND_API nd_status nd_eval(const char* checkpoint, const nd_config* data_config, const char* split, const char* out_dir);
ND_API nd_status nd_sweep_beta(const nd_config* config);
ND_API nd_status nd_ablate(const nd_config* config);
/* ND_ERR_NUMERIC when any loss exceeds the tolerance. */
ND_API nd_status nd_gradcheck(const nd_config* config);
ND_API nd_status nd_bench(const nd_config* config, double* ratio_out);

/* ---- trained models ---- */
ND_API nd_status nd_model_load(const char* checkpoint, nd_model** out);
/* Depth 0 for an absent side. */
ND_API nd_status nd_model_info(const nd_model* model, size_t* teacher_depth, size_t* student_depth, size_t* k,
                               size_t* num_classes);
/* Classification logits of one token-id sequence; side 0 = teacher, 1 = student.
 * logits must hold num_classes values. */
ND_API nd_status nd_model_classify(const nd_model* model, int side, const uint32_t* ids, size_t n, double* logits);
ND_API void nd_model_free(nd_model* model);

#ifdef __cplusplus
}
#endif

#endif
