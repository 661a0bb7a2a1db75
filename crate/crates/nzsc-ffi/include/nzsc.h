#ifndef NZSC_H
#define NZSC_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define NZSC_OK 0

#define NZSC_ERR_NULL_ARGUMENT -1

#define NZSC_ERR_INVALID_UTF8 -2

#define NZSC_ERR_CONFIG -3

#define NZSC_ERR_IO -4

#define NZSC_ERR_BOUNDS -5

#define NZSC_ERR_STATE -6

#define NZSC_ERR_PANIC -7

/**
 * An environment plus one in-flight episode.
 */
typedef struct NzscEnv NzscEnv;

/**
 * A loaded checkpoint with per-slot recurrent state, for step-by-step
 * action sampling from another language.
 */
typedef struct NzscPolicy NzscPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *nzsc_last_error(void);

/**
 * Create an environment from a TOML experiment configuration. The agent
 * slots take their noise models from `noise_grid` in order.
 *
 * # Safety
 * `config_toml` must be a valid NUL-terminated string and `out` a valid
 * pointer; the returned handle must be freed with `nzsc_env_free`.
 */
int nzsc_env_create(const char *config_toml, struct NzscEnv **out);

/**
 * # Safety
 * `env` must be a handle from `nzsc_env_create` not yet freed (or null).
 */
void nzsc_env_free(struct NzscEnv *env);

/**
 * # Safety
 * `env` must be a valid handle.
 */
int nzsc_env_num_agents(const struct NzscEnv *env);

/**
 * # Safety
 * `env` must be a valid handle.
 */
int nzsc_env_observation_dim(const struct NzscEnv *env);

/**
 * # Safety
 * `env` must be a valid handle.
 */
int nzsc_env_horizon(const struct NzscEnv *env);

/**
 * Write the action-head sizes into `sizes`; returns the head count, or a
 * negative error if `capacity` is too small.
 *
 * # Safety
 * `env` must be valid; `sizes` must point to `capacity` writable u32s.
 */
int nzsc_env_action_heads(const struct NzscEnv *env, uint32_t *sizes, int capacity);

/**
 * Start episode `episode` of stream `seed`. Identical (seed, episode)
 * pairs reproduce identical episodes.
 *
 * # Safety
 * `env` must be a valid handle.
 */
int nzsc_env_reset(struct NzscEnv *env, uint64_t seed, uint64_t episode);

/**
 * Apply one joint action (`num_agents * num_heads` indices, agent-major).
 *
 * # Safety
 * `env` must be valid and reset; `actions` must hold `actions_len` u32s;
 * `reward` and `done` must be writable.
 */
int nzsc_env_step(struct NzscEnv *env,
                  const uint32_t *actions,
                  size_t actions_len,
                  double *reward,
                  uint8_t *done);

/**
 * Fill `out` with agent `agent`'s current observation.
 *
 * # Safety
 * `env` must be valid and reset; `out` must hold `len` floats with `len`
 * at least the observation dim.
 */
int nzsc_env_observe(const struct NzscEnv *env, uint32_t agent, float *out, size_t len);

/**
 * Whether the most recent step satisfied the coordination predicate
 * (1/0), or a negative error.
 *
 * # Safety
 * `env` must be a valid handle.
 */
int nzsc_env_coordinated(const struct NzscEnv *env);

/**
 * Load a checkpoint for step-by-step acting.
 *
 * # Safety
 * `path` must be a valid NUL-terminated path and `out` writable; free the
 * handle with `nzsc_policy_free`.
 */
int nzsc_policy_load(const char *path, struct NzscPolicy **out);

/**
 * # Safety
 * `policy` must be a handle from `nzsc_policy_load` not yet freed (or null).
 */
void nzsc_policy_free(struct NzscPolicy *policy);

/**
 * Number of agent nets stored in the checkpoint.
 *
 * # Safety
 * `policy` must be a valid handle.
 */
int nzsc_policy_num_agents(const struct NzscPolicy *policy);

/**
 * Reset recurrent state (start of an episode) and reseed action sampling.
 *
 * # Safety
 * `policy` must be a valid handle.
 */
int nzsc_policy_reset(struct NzscPolicy *policy, uint64_t seed);

/**
 * Advance agent `slot` one step: consume an observation, sample one action
 * index per head into `actions_out`. Returns the head count.
 *
 * # Safety
 * `policy` must be valid; `obs` must hold `obs_len` floats matching the
 * network's observation dim; `actions_out` must hold `capacity` u32s.
 */
int nzsc_policy_act(struct NzscPolicy *policy,
                    uint32_t slot,
                    const float *obs,
                    size_t obs_len,
                    uint32_t *actions_out,
                    size_t capacity);

/**
 * Evaluate two checkpoints as a team: checkpoint A takes seat 0 with its
 * trained noise model, checkpoint B seat 1. Writes the mean episode return
 * and the terminal-step coordination rate.
 *
 * # Safety
 * Both paths must be valid NUL-terminated strings; `mean_return` and
 * `coordination_rate` must be writable.
 */
int nzsc_eval_pair(const char *checkpoint_a,
                   const char *checkpoint_b,
                   uint64_t episodes,
                   uint64_t seed,
                   double *mean_return,
                   double *coordination_rate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NZSC_H */
