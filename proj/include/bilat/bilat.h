/* C interface to the bilateral-control imitation learning pipeline.
 *
 * All functions that can fail return an error code and record a message
 * retrievable with bilat_last_error(). Handles are opaque; free them with
 * the matching *_free call. */

#ifndef BILAT_BILAT_H
#define BILAT_BILAT_H

#include <stdint.h>

#if defined(_WIN32)
#define BILAT_API __declspec(dllexport)
#else
#define BILAT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

enum {
  BILAT_OK = 0,
  BILAT_ERR_USAGE = 1,   /* bad arguments / missing state */
  BILAT_ERR_CONFIG = 2,  /* invalid configuration */
  BILAT_ERR_RUNTIME = 3, /* anything that failed while running */
};

typedef struct bilat_ctx bilat_ctx;
typedef struct bilat_episode bilat_episode;

BILAT_API const char* bilat_version(void);

BILAT_API bilat_ctx* bilat_ctx_new(void);
BILAT_API void bilat_ctx_free(bilat_ctx* ctx);
BILAT_API const char* bilat_last_error(const bilat_ctx* ctx);

/* Configuration: load a JSON file or task defaults ("cup" | "sponge"),
 * then optionally override dotted keys with JSON values. */
BILAT_API int bilat_config_load(bilat_ctx* ctx, const char* path);
BILAT_API int bilat_config_load_default(bilat_ctx* ctx, const char* task);
BILAT_API int bilat_config_override(bilat_ctx* ctx, const char* dotted_key,
                                    const char* json_value);
BILAT_API int bilat_config_validate(bilat_ctx* ctx);
/* JSON of the effective configuration; owned by the context. */
BILAT_API const char* bilat_config_dump(bilat_ctx* ctx);

/* Pipeline stages. Directories are created as needed. */
BILAT_API int bilat_collect(bilat_ctx* ctx, const char* instruction, int episodes,
                            const char* out_dir);
BILAT_API int bilat_augment(bilat_ctx* ctx, const char* input, int factor,
                            const char* out_dir);
BILAT_API int bilat_train(bilat_ctx* ctx, const char* data, const char* checkpoint_out,
                          const char* log_csv);
BILAT_API int bilat_rollout(bilat_ctx* ctx, const char* checkpoint,
                            const char* instruction, int count, const char* out_dir);
BILAT_API int bilat_eval(bilat_ctx* ctx, const char* rollouts, const char* report_path);
BILAT_API int bilat_plotdata(bilat_ctx* ctx, const char* episode_path,
                             const char* out_prefix);
BILAT_API int bilat_validate_file(bilat_ctx* ctx, const char* path);

/* Episode inspection. */
BILAT_API int bilat_episode_open(bilat_ctx* ctx, const char* path, bilat_episode** out);
BILAT_API void bilat_episode_free(bilat_episode* episode);
BILAT_API int64_t bilat_episode_samples(const bilat_episode* episode);
BILAT_API int64_t bilat_episode_frames(const bilat_episode* episode);
BILAT_API int bilat_episode_joint_count(const bilat_episode* episode);
BILAT_API int bilat_episode_arm_count(const bilat_episode* episode);
BILAT_API int bilat_episode_control_rate(const bilat_episode* episode);
BILAT_API const char* bilat_episode_instruction(const bilat_episode* episode);
/* field: 0 angle, 1 velocity, 2 torque; leader_side: 1 leader, 0 follower. */
BILAT_API double bilat_episode_value(const bilat_episode* episode, int leader_side,
                                     int64_t t, int arm, int joint, int field);

#ifdef __cplusplus
}
#endif

#endif /* BILAT_BILAT_H */
