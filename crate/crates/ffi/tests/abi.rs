use std::ffi::{CStr, CString};
use std::ptr;

use icsrl::environment::{Environment, WorldConfig};
use icsrl::evaluation::{monte_carlo, run_episode, Policy};
use icsrl_ffi::*;

fn last_error() -> String {
    let p = icsrl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn quiet_config() -> CString {
    CString::new(r#"{"schema_version":1,"overrides":{"world":{"enemies":{"count":0}}}}"#).unwrap()
}

unsafe fn new_env(cfg: Option<&CString>) -> *mut IcsrlEnv {
    let mut env = ptr::null_mut();
    let status = icsrl_env_new(cfg.map_or(ptr::null(), |c| c.as_ptr()), &mut env);
    assert_eq!(status, ICSRL_OK);
    env
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(icsrl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn env_lifecycle_and_errors() {
    unsafe {
        let env = new_env(None);
        let mut n = 0usize;
        assert_eq!(icsrl_env_observation_len(env, &mut n), ICSRL_OK);
        assert_eq!(n, WorldConfig::desk_scale().observation_len());
        let mut actions = 0usize;
        assert_eq!(icsrl_env_action_count(env, &mut actions), ICSRL_OK);
        assert!(actions > 0);

        let mut obs = vec![0.0; n];
        let mut res = IcsrlStepResult::default();
        assert_eq!(icsrl_env_step(env, 0, obs.as_mut_ptr(), n, &mut res), ICSRL_ERR_STATE);
        assert!(last_error().contains("reset"));

        assert_eq!(icsrl_env_reset(env, 7, obs.as_mut_ptr(), n - 1), ICSRL_ERR_BUFFER);
        assert_eq!(icsrl_env_reset(env, 7, ptr::null_mut(), n), ICSRL_ERR_NULL);
        assert_eq!(icsrl_env_reset(env, 7, obs.as_mut_ptr(), n), ICSRL_OK);
        let rust_env = Environment::new(WorldConfig::desk_scale()).unwrap();
        assert_eq!(obs, rust_env.reset(7).unwrap().1.values);

        assert_eq!(icsrl_env_step(env, actions, obs.as_mut_ptr(), n, &mut res), ICSRL_ERR_INVALID);
        assert_eq!(icsrl_env_step(env, 0, obs.as_mut_ptr(), n, &mut res), ICSRL_OK);
        assert_eq!(res.time_step, 1);
        let mut f = IcsrlUavState::default();
        assert_eq!(icsrl_env_friendly(env, &mut f), ICSRL_OK);
        assert!(f.speed > 0.0);
        icsrl_env_free(env);
        icsrl_env_free(ptr::null_mut());
    }
}

#[test]
fn bad_config_is_invalid() {
    unsafe {
        let mut env = ptr::null_mut();
        let bad = CString::new(r#"{"schema_version":1,"overrides":{"world":{"nope":1}}}"#).unwrap();
        assert_eq!(icsrl_env_new(bad.as_ptr(), &mut env), ICSRL_ERR_INVALID);
        assert!(env.is_null());
        assert!(last_error().contains("overrides.world.nope"));
        let garbage = CString::new("{").unwrap();
        assert_eq!(icsrl_env_new(garbage.as_ptr(), &mut env), ICSRL_ERR_INVALID);
        assert_eq!(icsrl_env_new(ptr::null(), ptr::null_mut()), ICSRL_ERR_NULL);
    }
}

#[test]
fn driven_greedy_episode_matches_the_library() {
    let cfg = quiet_config();
    unsafe {
        let env = new_env(Some(&cfg));
        let mut policy = ptr::null_mut();
        let name = CString::new("greedy").unwrap();
        assert_eq!(icsrl_policy_baseline(name.as_ptr(), ptr::null(), &mut policy), ICSRL_OK);
        let mut act = 0usize;
        assert_eq!(icsrl_policy_act(policy, env, &mut act), ICSRL_ERR_STATE);

        let mut n = 0usize;
        icsrl_env_observation_len(env, &mut n);
        let mut obs = vec![0.0; n];
        assert_eq!(icsrl_env_reset(env, 3, obs.as_mut_ptr(), n), ICSRL_OK);
        assert_eq!(icsrl_policy_begin(policy, env, 3), ICSRL_OK);
        let mut res = IcsrlStepResult::default();
        let mut actions = Vec::new();
        while res.outcome == ICSRL_OUTCOME_NONE {
            assert_eq!(icsrl_policy_act(policy, env, &mut act), ICSRL_OK);
            actions.push(act);
            assert_eq!(icsrl_env_step(env, act, obs.as_mut_ptr(), n, &mut res), ICSRL_OK);
            assert_eq!(icsrl_policy_observe(policy, env), ICSRL_OK);
        }
        let mut world = WorldConfig::desk_scale();
        world.enemies.count = 0;
        let log = run_episode(&Policy::Greedy, &Environment::new(world.clone()).unwrap(), 3).unwrap();
        assert_eq!(actions, log.steps.iter().map(|s| s.action).collect::<Vec<_>>());
        assert_eq!(res.outcome, ICSRL_OUTCOME_SUCCESS);

        let mut m = IcsrlMetrics::default();
        assert_eq!(icsrl_evaluate(policy, env, 4, 100, &mut m), ICSRL_OK);
        let mc = monte_carlo(&Policy::Greedy, &Environment::new(world).unwrap(), 4, 100, 1).unwrap();
        assert_eq!(m.episodes, 4);
        assert_eq!(m.success_rate, mc.report.success_rate);
        assert_eq!(m.aec, mc.report.aec);
        assert!(m.prediction_accuracy.is_nan());
        assert_eq!(icsrl_evaluate(policy, env, 0, 100, &mut m), ICSRL_ERR_INVALID);

        icsrl_policy_free(policy);
        icsrl_env_free(env);
    }
}

#[test]
fn learned_names_are_rejected_as_baselines() {
    unsafe {
        let mut policy = ptr::null_mut();
        let name = CString::new("icsrl").unwrap();
        assert_eq!(icsrl_policy_baseline(name.as_ptr(), ptr::null(), &mut policy), ICSRL_ERR_INVALID);
        let name = CString::new("nonsense").unwrap();
        assert_eq!(icsrl_policy_baseline(name.as_ptr(), ptr::null(), &mut policy), ICSRL_ERR_INVALID);
        let dir = CString::new("/nonexistent/checkpoint").unwrap();
        assert_ne!(icsrl_policy_load(dir.as_ptr(), &mut policy), ICSRL_OK);
        assert!(policy.is_null());
    }
}

#[test]
fn checkpoint_loads_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(
        &cfg_path,
        r#"{"schema_version":1,"overrides":{"train":{"episodes":3,"min_fill":64}}}"#,
    )
    .unwrap();
    let out = dir.path().join("ddqn");
    let code = icsrl::cli::run([
        "icsrl",
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--algo",
        "ddqn",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
        "--profile",
        "desk",
    ]);
    assert_eq!(code, 0);
    unsafe {
        let mut policy = ptr::null_mut();
        let path = CString::new(out.to_str().unwrap()).unwrap();
        assert_eq!(icsrl_policy_load(path.as_ptr(), &mut policy), ICSRL_OK);
        let env = new_env(None);
        let mut m = IcsrlMetrics::default();
        assert_eq!(icsrl_evaluate(policy, env, 2, 5, &mut m), ICSRL_OK);
        assert_eq!(m.episodes, 2);
        assert!((0.0..=1.0).contains(&m.success_rate));
        icsrl_policy_free(policy);
        icsrl_env_free(env);
    }
}

#[test]
fn header_declares_the_abi() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/icsrl.h")).unwrap();
    for sym in [
        "icsrl_last_error",
        "icsrl_env_new",
        "icsrl_env_step",
        "icsrl_policy_load",
        "icsrl_policy_act",
        "icsrl_evaluate",
        "typedef struct IcsrlEnv IcsrlEnv",
        "ICSRL_ERR_PANIC",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
    if let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-Wall", "-Werror"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include/icsrl.h"))
        .status()
    {
        assert!(status.success(), "header does not compile as C");
    }
}
