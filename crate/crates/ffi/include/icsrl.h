#ifndef ICSRL_H
#define ICSRL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define ICSRL_OUTCOME_NONE 0

#define ICSRL_OUTCOME_SUCCESS 1

#define ICSRL_OUTCOME_FAIL_ATTACK 2

#define ICSRL_OUTCOME_FAIL_OUT_OF_BOUNDS 3

#define ICSRL_OUTCOME_FAIL_TIMEOUT 4

/**
 * A simulator instance with one running episode.
 */
typedef struct IcsrlEnv IcsrlEnv;

/**
 * A policy plus its per-episode driver.
 */
typedef struct IcsrlPolicy IcsrlPolicy;

typedef int32_t IcsrlStatus;

typedef struct IcsrlStepResult {
  /**
   * Unit-weighted total reward of the step.
   */
  double reward;
  /**
   * One of the `ICSRL_OUTCOME_*` codes.
   */
  int32_t outcome;
  /**
   * Non-zero while inside an enemy detection radius.
   */
  int32_t detected;
  uint32_t time_step;
} IcsrlStepResult;

typedef struct IcsrlUavState {
  double x;
  double y;
  double speed;
  double heading;
} IcsrlUavState;

typedef struct IcsrlMetrics {
  uint64_t episodes;
  double success_rate;
  /**
   * Mean exposure entries per episode.
   */
  double aec;
  /**
   * Mean exposed seconds per episode.
   */
  double aet;
  /**
   * NaN when the policy has no intent predictor.
   */
  double prediction_accuracy;
  double mean_reward;
} IcsrlMetrics;

#define ICSRL_OK 0

/**
 * A required pointer argument was null.
 */
#define ICSRL_ERR_NULL 1

/**
 * Bad input: configuration, arguments or file contents.
 */
#define ICSRL_ERR_INVALID 2

/**
 * The operation failed while running.
 */
#define ICSRL_ERR_RUNTIME 3

/**
 * A caller buffer is too small; the needed length was written back.
 */
#define ICSRL_ERR_BUFFER 4

/**
 * The call is not allowed in the handle's current state.
 */
#define ICSRL_ERR_STATE 5

/**
 * Rust code panicked; the handle involved should be freed.
 */
#define ICSRL_ERR_PANIC 6

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next failing call on the same thread.
 */
const char *icsrl_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *icsrl_version(void);

/**
 * Creates a simulator from an experiment config document (JSON text with
 * `schema_version`, optional `profile` and `overrides`). Null selects the
 * desk profile.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` must be null or writable.
 */
IcsrlStatus icsrl_env_new(const char *config_json, struct IcsrlEnv **out);

/**
 * Releases an environment. Null is ignored.
 *
 * # Safety
 * `env` must be null or a handle from `icsrl_env_new` that has not been freed.
 */
void icsrl_env_free(struct IcsrlEnv *env);

/**
 * # Safety
 * Handles must be null or live values from their constructor. `out` must be null or writable.
 */
IcsrlStatus icsrl_env_observation_len(const struct IcsrlEnv *env, size_t *out);

/**
 * # Safety
 * Handles must be null or live values from their constructor. `out` must be null or writable.
 */
IcsrlStatus icsrl_env_action_count(const struct IcsrlEnv *env, size_t *out);

/**
 * Starts a new episode and writes its observation into `obs`.
 *
 * # Safety
 * Handles must be null or live values from their constructor. `obs` must be null or valid for `obs_len` writes.
 */
IcsrlStatus icsrl_env_reset(struct IcsrlEnv *env,
                            uint64_t seed,
                            double *obs,
                            size_t obs_len);

/**
 * Applies action `action`, writes the next observation and the step result.
 *
 * # Safety
 * Handles must be null or live values from their constructor. `obs` must be null or valid for `obs_len` writes, and `out` null or writable.
 */
IcsrlStatus icsrl_env_step(struct IcsrlEnv *env,
                           size_t action,
                           double *obs,
                           size_t obs_len,
                           struct IcsrlStepResult *result);

/**
 * # Safety
 * Handles must be null or live values from their constructor. `out` must be null or writable.
 */
IcsrlStatus icsrl_env_friendly(const struct IcsrlEnv *env, struct IcsrlUavState *out);

/**
 * Loads a checkpoint directory written by `icsrl train`.
 *
 * # Safety
 * `checkpoint_dir` must be null or a NUL-terminated string; `out` must be null or writable.
 */
IcsrlStatus icsrl_policy_load(const char *checkpoint_dir, struct IcsrlPolicy **out);

/**
 * Creates a non-learning policy: "pso", "gt" or "greedy". Parameters come
 * from `config_json` (null for defaults).
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be null or writable.
 */
IcsrlStatus icsrl_policy_baseline(const char *name,
                                  const char *config_json,
                                  struct IcsrlPolicy **out);

/**
 * # Safety
 * `policy` must be null or a policy handle that has not been freed.
 */
void icsrl_policy_free(struct IcsrlPolicy *policy);

/**
 * Binds the policy to the episode just started on `env`. Call after every
 * `icsrl_env_reset`; `seed` seeds stochastic baselines.
 *
 * # Safety
 * Handles must be null or live values from their constructor.
 */
IcsrlStatus icsrl_policy_begin(struct IcsrlPolicy *policy,
                               const struct IcsrlEnv *env,
                               uint64_t seed);

/**
 * Greedy action for the current state of `env`. The caller steps the
 * environment with it and then calls [`icsrl_policy_observe`].
 *
 * # Safety
 * Handles must be null or live values from their constructor. `out` must be null or writable.
 */
IcsrlStatus icsrl_policy_act(struct IcsrlPolicy *policy,
                             const struct IcsrlEnv *env,
                             size_t *action);

/**
 * Feeds the post-step world to the policy's intent tracker.
 *
 * # Safety
 * Handles must be null or live values from their constructor.
 */
IcsrlStatus icsrl_policy_observe(struct IcsrlPolicy *policy, const struct IcsrlEnv *env);

/**
 * Greedy Monte-Carlo evaluation over seeds `seed_base..seed_base+episodes`.
 *
 * # Safety
 * Handles must be null or live values from their constructor. `out` must be null or writable.
 */
IcsrlStatus icsrl_evaluate(const struct IcsrlPolicy *policy,
                           const struct IcsrlEnv *env,
                           uint64_t episodes,
                           uint64_t seed_base,
                           struct IcsrlMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ICSRL_H */
