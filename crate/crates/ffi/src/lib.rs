//! C ABI over the simulator, trained policies and the evaluation harness.
//!
//! Every function returns an `IcsrlStatus`. On failure the message is kept
//! per thread and can be read with [`icsrl_last_error`]. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use icsrl::cli::{checkpoint_config, ExperimentConfig};
use icsrl::environment::{Environment, Observation, Terminal, WorldState};
use icsrl::evaluation::{monte_carlo, EpisodeDriver, Policy, PolicyKind};
use icsrl::Error;

pub type IcsrlStatus = i32;

pub const ICSRL_OK: IcsrlStatus = 0;
/// A required pointer argument was null.
pub const ICSRL_ERR_NULL: IcsrlStatus = 1;
/// Bad input: configuration, arguments or file contents.
pub const ICSRL_ERR_INVALID: IcsrlStatus = 2;
/// The operation failed while running.
pub const ICSRL_ERR_RUNTIME: IcsrlStatus = 3;
/// A caller buffer is too small; the needed length was written back.
pub const ICSRL_ERR_BUFFER: IcsrlStatus = 4;
/// The call is not allowed in the handle's current state.
pub const ICSRL_ERR_STATE: IcsrlStatus = 5;
/// Rust code panicked; the handle involved should be freed.
pub const ICSRL_ERR_PANIC: IcsrlStatus = 6;

pub const ICSRL_OUTCOME_NONE: i32 = 0;
pub const ICSRL_OUTCOME_SUCCESS: i32 = 1;
pub const ICSRL_OUTCOME_FAIL_ATTACK: i32 = 2;
pub const ICSRL_OUTCOME_FAIL_OUT_OF_BOUNDS: i32 = 3;
pub const ICSRL_OUTCOME_FAIL_TIMEOUT: i32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> IcsrlStatus {
    match err {
        Error::Usage(_) => ICSRL_ERR_STATE,
        e if e.is_validation() => ICSRL_ERR_INVALID,
        _ => ICSRL_ERR_RUNTIME,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (IcsrlStatus, String)>) -> IcsrlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ICSRL_OK,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            ICSRL_ERR_PANIC
        }
    }
}

fn lib(err: Error) -> (IcsrlStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(name: &str) -> (IcsrlStatus, String) {
    (ICSRL_ERR_NULL, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (IcsrlStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ICSRL_ERR_INVALID, format!("{name} is not UTF-8")))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, name: &str) -> Result<&'a mut [f64], (IcsrlStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    if len < need {
        return Err((ICSRL_ERR_BUFFER, format!("{name} holds {len} values, {need} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn icsrl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn icsrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A simulator instance with one running episode.
pub struct IcsrlEnv {
    env: Environment,
    episode: Option<(WorldState, Observation)>,
}

/// A policy plus its per-episode driver.
pub struct IcsrlPolicy {
    policy: Policy,
    driver: Option<EpisodeDriver>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IcsrlStepResult {
    /// Unit-weighted total reward of the step.
    pub reward: f64,
    /// One of the `ICSRL_OUTCOME_*` codes.
    pub outcome: i32,
    /// Non-zero while inside an enemy detection radius.
    pub detected: i32,
    pub time_step: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IcsrlUavState {
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub heading: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct IcsrlMetrics {
    pub episodes: u64,
    pub success_rate: f64,
    /// Mean exposure entries per episode.
    pub aec: f64,
    /// Mean exposed seconds per episode.
    pub aet: f64,
    /// NaN when the policy has no intent predictor.
    pub prediction_accuracy: f64,
    pub mean_reward: f64,
}

fn outcome_code(t: Option<Terminal>) -> i32 {
    match t {
        None => ICSRL_OUTCOME_NONE,
        Some(Terminal::Success) => ICSRL_OUTCOME_SUCCESS,
        Some(Terminal::FailAttack) => ICSRL_OUTCOME_FAIL_ATTACK,
        Some(Terminal::FailOutOfBounds) => ICSRL_OUTCOME_FAIL_OUT_OF_BOUNDS,
        Some(Terminal::FailTimeout) => ICSRL_OUTCOME_FAIL_TIMEOUT,
    }
}

unsafe fn config_arg(json: *const c_char) -> Result<ExperimentConfig, (IcsrlStatus, String)> {
    if json.is_null() {
        return ExperimentConfig::load(None, None, None).map_err(lib);
    }
    let text = str_arg(json, "config_json")?;
    let doc = serde_json::from_str(text).map_err(|e| (ICSRL_ERR_INVALID, format!("config_json: {e}")))?;
    ExperimentConfig::from_document(&doc, None).map_err(lib)
}

/// Creates a simulator from an experiment config document (JSON text with
/// `schema_version`, optional `profile` and `overrides`). Null selects the
/// desk profile.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn icsrl_env_new(config_json: *const c_char, out: *mut *mut IcsrlEnv) -> IcsrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = config_arg(config_json)?;
        let env = Environment::new(cfg.world).map_err(lib)?;
        *out = Box::into_raw(Box::new(IcsrlEnv { env, episode: None }));
        Ok(())
    })
}

/// Releases an environment. Null is ignored.
///
/// # Safety
/// `env` must be null or a handle from `icsrl_env_new` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn icsrl_env_free(env: *mut IcsrlEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// Handles must be null or live values from their constructor. `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn icsrl_env_observation_len(env: *const IcsrlEnv, out: *mut usize) -> IcsrlStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = env.env.observation_len();
        Ok(())
    })
}

/// # Safety
/// Handles must be null or live values from their constructor. `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn icsrl_env_action_count(env: *const IcsrlEnv, out: *mut usize) -> IcsrlStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = env.env.action_count();
        Ok(())
    })
}

/// Starts a new episode and writes its observation into `obs`.
///
/// # Safety
/// Handles must be null or live values from their constructor. `obs` must be null or valid for `obs_len` writes.
#[no_mangle]
pub unsafe extern "C" fn icsrl_env_reset(env: *mut IcsrlEnv, seed: u64, obs: *mut f64, obs_len: usize) -> IcsrlStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let buf = out_slice(obs, obs_len, env.env.observation_len(), "obs")?;
        let (state, o) = env.env.reset(seed).map_err(lib)?;
        buf[..o.values.len()].copy_from_slice(&o.values);
        env.episode = Some((state, o));
        Ok(())
    })
}

/// Applies action `action`, writes the next observation and the step result.
///
/// # Safety
/// Handles must be null or live values from their constructor. `obs` must be null or valid for `obs_len` writes, and `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn icsrl_env_step(
    env: *mut IcsrlEnv,
    action: usize,
    obs: *mut f64,
    obs_len: usize,
    result: *mut IcsrlStepResult,
) -> IcsrlStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let result = result.as_mut().ok_or_else(|| null("result"))?;
        let buf = out_slice(obs, obs_len, env.env.observation_len(), "obs")?;
        if action >= env.env.action_count() {
            return Err((
                ICSRL_ERR_INVALID,
                format!("action {action} out of range for {} actions", env.env.action_count()),
            ));
        }
        let (state, o) = env
            .episode
            .as_mut()
            .ok_or((ICSRL_ERR_STATE, "icsrl_env_reset has not been called".to_string()))?;
        let out = env.env.step(state, action).map_err(lib)?;
        buf[..out.observation.values.len()].copy_from_slice(&out.observation.values);
        *result = IcsrlStepResult {
            reward: out.reward.total(),
            outcome: outcome_code(out.terminal),
            detected: i32::from(out.reward.detected),
            time_step: state.time_step,
        };
        *o = out.observation;
        Ok(())
    })
}

/// # Safety
/// Handles must be null or live values from their constructor. `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn icsrl_env_friendly(env: *const IcsrlEnv, out: *mut IcsrlUavState) -> IcsrlStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (state, _) = env
            .episode
            .as_ref()
            .ok_or((ICSRL_ERR_STATE, "icsrl_env_reset has not been called".to_string()))?;
        let f = state.friendly;
        *out = IcsrlUavState {
            x: f.position.x,
            y: f.position.y,
            speed: f.speed,
            heading: f.heading,
        };
        Ok(())
    })
}

/// Loads a checkpoint directory written by `icsrl train`.
///
/// # Safety
/// `checkpoint_dir` must be null or a NUL-terminated string; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn icsrl_policy_load(checkpoint_dir: *const c_char, out: *mut *mut IcsrlPolicy) -> IcsrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = Path::new(str_arg(checkpoint_dir, "checkpoint_dir")?);
        let cfg = checkpoint_config(dir).map_err(lib)?;
        let (learned, _) = icsrl::agents::LearnedPolicy::load(dir, &cfg.world).map_err(lib)?;
        *out = Box::into_raw(Box::new(IcsrlPolicy {
            policy: Policy::Learned(learned),
            driver: None,
        }));
        Ok(())
    })
}

/// Creates a non-learning policy: "pso", "gt" or "greedy". Parameters come
/// from `config_json` (null for defaults).
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn icsrl_policy_baseline(
    name: *const c_char,
    config_json: *const c_char,
    out: *mut *mut IcsrlPolicy,
) -> IcsrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind: PolicyKind = str_arg(name, "name")?.parse().map_err(lib)?;
        let cfg = config_arg(config_json)?;
        let policy = match kind {
            PolicyKind::Pso => Policy::Pso(cfg.baselines.pso),
            PolicyKind::GameTheory => Policy::GameTheory(cfg.baselines.game_theory),
            PolicyKind::Greedy => Policy::Greedy,
            other => {
                return Err((
                    ICSRL_ERR_INVALID,
                    format!("{other} is learned; use icsrl_policy_load"),
                ))
            }
        };
        *out = Box::into_raw(Box::new(IcsrlPolicy { policy, driver: None }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a policy handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn icsrl_policy_free(policy: *mut IcsrlPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Binds the policy to the episode just started on `env`. Call after every
/// `icsrl_env_reset`; `seed` seeds stochastic baselines.
///
/// # Safety
/// Handles must be null or live values from their constructor.
#[no_mangle]
pub unsafe extern "C" fn icsrl_policy_begin(policy: *mut IcsrlPolicy, env: *const IcsrlEnv, seed: u64) -> IcsrlStatus {
    guard(|| {
        let policy = policy.as_mut().ok_or_else(|| null("policy"))?;
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let (state, _) = env
            .episode
            .as_ref()
            .ok_or((ICSRL_ERR_STATE, "icsrl_env_reset has not been called".to_string()))?;
        policy.driver = Some(EpisodeDriver::begin(&policy.policy, &env.env, seed, state).map_err(lib)?);
        Ok(())
    })
}

/// Greedy action for the current state of `env`. The caller steps the
/// environment with it and then calls [`icsrl_policy_observe`].
///
/// # Safety
/// Handles must be null or live values from their constructor. `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn icsrl_policy_act(
    policy: *mut IcsrlPolicy,
    env: *const IcsrlEnv,
    action: *mut usize,
) -> IcsrlStatus {
    guard(|| {
        let policy = policy.as_mut().ok_or_else(|| null("policy"))?;
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let action = action.as_mut().ok_or_else(|| null("action"))?;
        let (state, obs) = env
            .episode
            .as_ref()
            .ok_or((ICSRL_ERR_STATE, "icsrl_env_reset has not been called".to_string()))?;
        let driver = policy
            .driver
            .as_mut()
            .ok_or((ICSRL_ERR_STATE, "icsrl_policy_begin has not been called".to_string()))?;
        *action = driver.act(&policy.policy, &env.env, state, obs).map_err(lib)?.0;
        Ok(())
    })
}

/// Feeds the post-step world to the policy's intent tracker.
///
/// # Safety
/// Handles must be null or live values from their constructor.
#[no_mangle]
pub unsafe extern "C" fn icsrl_policy_observe(policy: *mut IcsrlPolicy, env: *const IcsrlEnv) -> IcsrlStatus {
    guard(|| {
        let policy = policy.as_mut().ok_or_else(|| null("policy"))?;
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let (state, _) = env
            .episode
            .as_ref()
            .ok_or((ICSRL_ERR_STATE, "icsrl_env_reset has not been called".to_string()))?;
        let driver = policy
            .driver
            .as_mut()
            .ok_or((ICSRL_ERR_STATE, "icsrl_policy_begin has not been called".to_string()))?;
        driver.observe(&env.env, state);
        Ok(())
    })
}

/// Greedy Monte-Carlo evaluation over seeds `seed_base..seed_base+episodes`.
///
/// # Safety
/// Handles must be null or live values from their constructor. `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn icsrl_evaluate(
    policy: *const IcsrlPolicy,
    env: *const IcsrlEnv,
    episodes: u64,
    seed_base: u64,
    out: *mut IcsrlMetrics,
) -> IcsrlStatus {
    guard(|| {
        let policy = policy.as_ref().ok_or_else(|| null("policy"))?;
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let mc = monte_carlo(&policy.policy, &env.env, episodes as usize, seed_base, 1).map_err(lib)?;
        let r = mc.report;
        *out = IcsrlMetrics {
            episodes: r.episode_count as u64,
            success_rate: r.success_rate,
            aec: r.aec,
            aet: r.aet,
            prediction_accuracy: r.prediction_accuracy.unwrap_or(f64::NAN),
            mean_reward: r.reward.mean,
        };
        Ok(())
    })
}
