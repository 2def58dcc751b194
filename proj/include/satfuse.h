/* C interface to the satfuse core. Every entry point returns an sf_status;
 * on failure sf_last_error() holds a single-line reason for the calling
 * thread. Status values double as process exit codes. */
#ifndef SATFUSE_H
#define SATFUSE_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sf_status {
    SF_OK = 0,
    SF_ERROR_CONFIG = 2,  /* invalid configuration or request */
    SF_ERROR_IO = 3,      /* filesystem or file-format failure */
    SF_ERROR_NUMERIC = 4  /* shape mismatch or non-finite numeric state */
} sf_status;

/* Tool version string, static storage. */
const char* sf_version(void);

/* Last error message on this thread ("" if none), valid until the next
 * satfuse call on the same thread. */
const char* sf_last_error(void);

/* Frees strings returned through out-parameters. */
void sf_string_free(char* s);

/* Merges defaults <- JSON config file (NULL/"" to skip) <- overrides JSON
 * object (NULL/"" to skip); *out_json receives the fully resolved config
 * (caller frees with sf_string_free). Unknown keys are rejected. */
sf_status sf_resolve_config(const char* config_path, const char* overrides_json, char** out_json);

/* Subcommand drivers. Each takes a resolved config JSON object (as produced
 * by sf_resolve_config) and writes its outputs under the config's out_dir.
 * sf_train reports progress on stderr. */
sf_status sf_gen_data(const char* config_json);
sf_status sf_train(const char* config_json);
sf_status sf_sample(const char* config_json);
sf_status sf_fuse(const char* config_json);
sf_status sf_eval(const char* config_json);
sf_status sf_ablate(const char* config_json);

/* Opaque checkpoint handle for inspection without running anything. */
typedef struct sf_checkpoint sf_checkpoint;

sf_status sf_checkpoint_open(const char* path, sf_checkpoint** out);
void sf_checkpoint_close(sf_checkpoint* ckpt);

/* JSON summary: iteration, parameter count, net/scene/train configs, final
 * loss. Caller frees with sf_string_free. */
sf_status sf_checkpoint_info(const sf_checkpoint* ckpt, char** out_json);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SATFUSE_H */
