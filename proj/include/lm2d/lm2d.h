#ifndef LM2D_LM2D_H
#define LM2D_LM2D_H

/* C interface to the motion-diffusion engine. All functions are safe to call
 * from any thread; the last error message is kept per thread. Strings passed
 * in are UTF-8 and are not retained after the call returns. */

#include <stddef.h>

#if defined(_WIN32)
#define LM2D_API __declspec(dllexport)
#elif defined(__GNUC__)
#define LM2D_API __attribute__((visibility("default")))
#else
#define LM2D_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as the command-line exit codes. */
typedef enum lm2d_status {
  LM2D_OK = 0,
  LM2D_ERR_USAGE = 1,
  LM2D_ERR_DATA = 2,
  LM2D_ERR_NUMERIC = 3,
  LM2D_ERR_INTERNAL = 4
} lm2d_status;

typedef struct lm2d_config lm2d_config;
typedef struct lm2d_motion lm2d_motion;

LM2D_API const char* lm2d_version(void);
/* Message of the most recent failure on the calling thread, or "". */
LM2D_API const char* lm2d_last_error(void);
/* One of "trace", "debug", "info", "warn", "error", "off". */
LM2D_API lm2d_status lm2d_set_log_level(const char* level);

/* Configuration. Every key has a default; unknown keys are rejected. */
LM2D_API lm2d_status lm2d_config_create(lm2d_config** out);
LM2D_API void lm2d_config_destroy(lm2d_config* config);
LM2D_API lm2d_status lm2d_config_load_file(lm2d_config* config, const char* path);
LM2D_API lm2d_status lm2d_config_set(lm2d_config* config, const char* key, const char* value);
/* String getters copy into buf (always NUL-terminated when size > 0) and
 * report the full length excluding the terminator in *needed. A buffer that
 * is too small is not an error; compare *needed against size. */
LM2D_API lm2d_status lm2d_config_get(const lm2d_config* config, const char* key, char* buf, size_t size,
                                     size_t* needed);
LM2D_API lm2d_status lm2d_config_render(const lm2d_config* config, char* buf, size_t size, size_t* needed);
LM2D_API lm2d_status lm2d_config_digest(const lm2d_config* config, char* buf, size_t size, size_t* needed);

/* Workflows. Each writes its outputs, run.log and config.resolved under
 * out_dir and leaves its inputs untouched. */
LM2D_API lm2d_status lm2d_make_synthetic(const lm2d_config* config, const char* out_dir);
LM2D_API lm2d_status lm2d_extract_features(const lm2d_config* config, const char* manifest, const char* out_dir);
LM2D_API lm2d_status lm2d_train(const lm2d_config* config, const char* manifest, const char* out_dir);
LM2D_API lm2d_status lm2d_distill(const lm2d_config* config, const char* manifest, const char* teacher,
                                  const char* out_dir);
/* one_step != 0 requires a consistency checkpoint, otherwise a diffusion
 * checkpoint; a mismatch is LM2D_ERR_USAGE. */
LM2D_API lm2d_status lm2d_sample(const lm2d_config* config, const char* manifest, const char* checkpoint,
                                 int one_step, const char* out_dir);
LM2D_API lm2d_status lm2d_train_encoder(const lm2d_config* config, const char* manifest, const char* out_dir);
/* encoder may be NULL; semantic matching is then reported as "na". */
LM2D_API lm2d_status lm2d_evaluate(const lm2d_config* config, const char* manifest, const char* samples_dir,
                                   const char* encoder, const char* out_dir);

/* Motion files. */
LM2D_API lm2d_status lm2d_motion_load(const char* path, lm2d_motion** out);
LM2D_API void lm2d_motion_destroy(lm2d_motion* motion);
LM2D_API int lm2d_motion_frames(const lm2d_motion* motion);
LM2D_API double lm2d_motion_fps(const lm2d_motion* motion);
/* 147 values: root translation then 24 6D joint rotations. */
LM2D_API lm2d_status lm2d_motion_pose(const lm2d_motion* motion, int frame, double* out147);
/* 72 values: global joint positions on the built-in skeleton, joint-major xyz. */
LM2D_API lm2d_status lm2d_motion_positions(const lm2d_motion* motion, int frame, double* out72);
/* Largest deviation of any bone length from the built-in skeleton over all
 * frames, in meters. */
LM2D_API lm2d_status lm2d_motion_bone_error(const lm2d_motion* motion, double* out);

#ifdef __cplusplus
}
#endif

#endif
