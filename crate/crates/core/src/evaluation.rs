//! Greedy Monte-Carlo evaluation, per-episode logs and aggregate metrics.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{AgentId, Algorithm, InputMode, LearnedPolicy};
use crate::baselines::{self, GameTheoryParams, PsoController, PsoParams};
use crate::environment::{
    EnemyMode, Environment, Observation, RewardBreakdown, ScenarioLabel, Terminal, WorldConfig, WorldState,
};
use crate::error::{Error, Result};
use crate::intent::{augmented_len, IntentTracker};
use crate::seeds;
use crate::simcore::{UavState, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Icsrl,
    CaDdqn,
    Ddqn,
    Pso,
    GameTheory,
    Greedy,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Icsrl,
        PolicyKind::CaDdqn,
        PolicyKind::Ddqn,
        PolicyKind::Pso,
        PolicyKind::GameTheory,
        PolicyKind::Greedy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Icsrl => "icsrl",
            PolicyKind::CaDdqn => "ca_ddqn",
            PolicyKind::Ddqn => "ddqn",
            PolicyKind::Pso => "pso",
            PolicyKind::GameTheory => "game_theory",
            PolicyKind::Greedy => "greedy",
        }
    }

    pub fn algorithm(self) -> Option<Algorithm> {
        match self {
            PolicyKind::Icsrl => Some(Algorithm::Icsrl),
            PolicyKind::CaDdqn => Some(Algorithm::CaDdqn),
            PolicyKind::Ddqn => Some(Algorithm::Ddqn),
            _ => None,
        }
    }

    pub fn is_learned(self) -> bool {
        self.algorithm().is_some()
    }
}

impl From<Algorithm> for PolicyKind {
    fn from(a: Algorithm) -> Self {
        match a {
            Algorithm::Icsrl => PolicyKind::Icsrl,
            Algorithm::CaDdqn => PolicyKind::CaDdqn,
            Algorithm::Ddqn => PolicyKind::Ddqn,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "icsrl" => Ok(PolicyKind::Icsrl),
            "ca_ddqn" | "ca" => Ok(PolicyKind::CaDdqn),
            "ddqn" => Ok(PolicyKind::Ddqn),
            "pso" => Ok(PolicyKind::Pso),
            "game_theory" | "gt" => Ok(PolicyKind::GameTheory),
            "greedy" => Ok(PolicyKind::Greedy),
            other => Err(Error::validation(format!(
                "unknown policy {other:?} (expected icsrl, ca, ddqn, pso, gt or greedy)"
            ))),
        }
    }
}

/// Anything that can fly an evaluation episode.
#[derive(Debug, Clone)]
pub enum Policy {
    Learned(LearnedPolicy),
    Pso(PsoParams),
    GameTheory(GameTheoryParams),
    Greedy,
}

impl Policy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Learned(p) => p.algorithm.into(),
            Policy::Pso(_) => PolicyKind::Pso,
            Policy::GameTheory(_) => PolicyKind::GameTheory,
            Policy::Greedy => PolicyKind::Greedy,
        }
    }

    /// Rejects learned policies whose networks do not fit `world`.
    pub fn check_world(&self, world: &WorldConfig) -> Result<()> {
        let Policy::Learned(p) = self else {
            return Ok(());
        };
        for a in p.controller.agents() {
            let want = match a.input_mode() {
                InputMode::Base => world.observation_len(),
                InputMode::Augmented => augmented_len(world),
            };
            if a.input_dim() != want {
                return Err(Error::Validation(format!(
                    "agent {} expects {} inputs but the world produces {want}",
                    a.id().as_str(),
                    a.input_dim()
                )));
            }
            if a.action_count() != world.actions.accel_levels.len() * world.actions.turn_levels.len() {
                return Err(Error::Validation(format!(
                    "agent {} has {} actions but the world defines {}",
                    a.id().as_str(),
                    a.action_count(),
                    world.actions.accel_levels.len() * world.actions.turn_levels.len()
                )));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Static geometry needed to draw an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub field_size: f64,
    pub target_center: Vec2,
    pub target_radius: f64,
    pub detect_range: f64,
}

impl Scene {
    pub fn of(world: &WorldConfig) -> Self {
        Self {
            field_size: world.field_size,
            target_center: world.target.center,
            target_radius: world.target.effective_radius,
            detect_range: world.enemies.detect_range,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnemySnapshot {
    pub state: UavState,
    pub mode: EnemyMode,
}

fn snapshot(state: &WorldState) -> Vec<EnemySnapshot> {
    state
        .enemies
        .iter()
        .map(|e| EnemySnapshot {
            state: e.state,
            mode: e.mode,
        })
        .collect()
}

/// World after one step, with the decision that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    /// Seconds since the episode start.
    pub time: f64,
    pub friendly: UavState,
    pub enemies: Vec<EnemySnapshot>,
    pub action: usize,
    pub agent: Option<AgentId>,
    pub was_random: bool,
    pub reward: RewardBreakdown,
    pub scenario: ScenarioLabel,
    pub detected: bool,
}

/// Hit count of the one-step intent forecasts issued in an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PredictionTally {
    pub within: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub policy: PolicyKind,
    pub seed: u64,
    pub config_hash: String,
    pub dt: f64,
    pub scene: Scene,
    pub initial_friendly: UavState,
    pub initial_enemies: Vec<EnemySnapshot>,
    pub steps: Vec<StepRecord>,
    pub outcome: Terminal,
    pub predictions: Option<PredictionTally>,
}

impl EpisodeLog {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward.total()).sum()
    }

    /// Steps with strictly positive total reward.
    pub fn positive_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.reward.total() > 0.0).count()
    }

    pub fn detection_flags(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.detected).collect()
    }

    /// Header line, one line per step, then an end line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = JsonlLine::Header {
            policy: self.policy,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            dt: self.dt,
            scene: self.scene,
            friendly: self.initial_friendly,
            enemies: self.initial_enemies.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.steps {
            serde_json::to_writer(&mut w, &JsonlLine::Step(s.clone()))?;
            w.write_all(b"\n")?;
        }
        let end = JsonlLine::End {
            outcome: self.outcome,
            steps: self.steps.len(),
            predictions: self.predictions,
        };
        serde_json::to_writer(&mut w, &end)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    /// Parses every episode in a JSONL stream written by [`Self::write_jsonl`].
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<EpisodeLog>> {
        let mut out = Vec::new();
        let mut current: Option<EpisodeLog> = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: JsonlLine =
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("episode log line {}: {e}", n + 1)))?;
            match parsed {
                JsonlLine::Header {
                    policy,
                    seed,
                    config_hash,
                    dt,
                    scene,
                    friendly,
                    enemies,
                } => {
                    if current.is_some() {
                        return Err(Error::Format(format!("episode log line {}: header inside an episode", n + 1)));
                    }
                    current = Some(EpisodeLog {
                        policy,
                        seed,
                        config_hash,
                        dt,
                        scene,
                        initial_friendly: friendly,
                        initial_enemies: enemies,
                        steps: Vec::new(),
                        outcome: Terminal::FailTimeout,
                        predictions: None,
                    });
                }
                JsonlLine::Step(s) => match current.as_mut() {
                    Some(log) => log.steps.push(s),
                    None => return Err(Error::Format(format!("episode log line {}: step before header", n + 1))),
                },
                JsonlLine::End {
                    outcome,
                    steps,
                    predictions,
                } => {
                    let mut log = current
                        .take()
                        .ok_or_else(|| Error::Format(format!("episode log line {}: end before header", n + 1)))?;
                    if log.steps.len() != steps {
                        return Err(Error::Format(format!(
                            "episode log line {}: end declares {steps} steps, found {}",
                            n + 1,
                            log.steps.len()
                        )));
                    }
                    log.outcome = outcome;
                    log.predictions = predictions;
                    out.push(log);
                }
            }
        }
        if current.is_some() {
            return Err(Error::Format("episode log ends inside an episode".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum JsonlLine {
    Header {
        policy: PolicyKind,
        seed: u64,
        config_hash: String,
        dt: f64,
        scene: Scene,
        friendly: UavState,
        enemies: Vec<EnemySnapshot>,
    },
    Step(StepRecord),
    End {
        outcome: Terminal,
        steps: usize,
        predictions: Option<PredictionTally>,
    },
}

/// Test hooks for [`run_episode_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EpisodeOptions {
    /// Put the friendly back at its start state after every step.
    pub hold_friendly: bool,
}

/// Flies one greedy episode.
pub fn run_episode(policy: &Policy, env: &Environment, seed: u64) -> Result<EpisodeLog> {
    run_episode_with(policy, env, seed, EpisodeOptions::default())
}

/// Per-episode state a policy carries between decisions: the PSO plan
/// and the intent tracker.
#[derive(Debug, Clone)]
pub struct EpisodeDriver {
    pso: Option<PsoController>,
    tracker: Option<IntentTracker>,
    tally: Option<PredictionTally>,
    threshold: f64,
}

impl EpisodeDriver {
    /// Starts an episode whose initial world is `state`.
    pub fn begin(policy: &Policy, env: &Environment, seed: u64, state: &WorldState) -> Result<Self> {
        policy.check_world(env.config())?;
        let mut tracker = match policy {
            Policy::Learned(p) => p.new_tracker(env.config()),
            _ => None,
        };
        if let Some(t) = tracker.as_mut() {
            t.observe(env, state);
        }
        Ok(Self {
            pso: match policy {
                Policy::Pso(params) => Some(PsoController::new(params.clone(), seeds::derive(seed, 0, 0))),
                _ => None,
            },
            tally: tracker.as_ref().map(|_| PredictionTally::default()),
            tracker,
            threshold: match policy {
                Policy::Learned(p) => p.intent.accuracy_threshold,
                _ => 0.0,
            },
        })
    }

    /// Greedy action for the current world and the expert that chose it.
    pub fn act(
        &mut self,
        policy: &Policy,
        env: &Environment,
        state: &WorldState,
        obs: &Observation,
    ) -> Result<(usize, Option<AgentId>)> {
        Ok(match policy {
            Policy::Learned(p) => {
                let inputs = p.inputs(env.config(), state, obs, self.tracker.as_mut())?;
                let d = p.decide(&inputs)?;
                (d.action, Some(d.agent))
            }
            Policy::Pso(_) => (
                self.pso
                    .as_mut()
                    .ok_or_else(|| Error::Usage("driver was not started for a PSO policy".into()))?
                    .next_action(env, state)?,
                None,
            ),
            Policy::GameTheory(gt) => (baselines::game_theory_action(env, state, gt.horizon)?, None),
            Policy::Greedy => (baselines::greedy_policy(env, state)?, None),
        })
    }

    /// Feeds the post-step world to the tracker and scores forecasts.
    pub fn observe(&mut self, env: &Environment, state: &WorldState) {
        let (Some(t), Some(tally)) = (self.tracker.as_mut(), self.tally.as_mut()) else {
            return;
        };
        for r in t.observe(env, state).records {
            if let Some(err) = r.position_error() {
                tally.total += 1;
                if err <= self.threshold {
                    tally.within += 1;
                }
            }
        }
    }

    pub fn predictions(&self) -> Option<PredictionTally> {
        self.tally
    }
}

pub fn run_episode_with(policy: &Policy, env: &Environment, seed: u64, options: EpisodeOptions) -> Result<EpisodeLog> {
    let world = env.config();
    let (mut state, mut obs) = env.reset(seed)?;
    let initial_friendly = state.friendly;
    let initial_enemies = snapshot(&state);
    let mut driver = EpisodeDriver::begin(policy, env, seed, &state)?;
    let dt = world.friendly.limits.dt;
    let mut steps = Vec::new();
    let outcome = loop {
        let (action, agent) = driver.act(policy, env, &state, &obs)?;
        let out = env.step(&mut state, action)?;
        if options.hold_friendly && out.terminal.is_none() {
            state.friendly = initial_friendly;
        }
        driver.observe(env, &state);
        steps.push(StepRecord {
            step: state.time_step,
            time: f64::from(state.time_step) * dt,
            friendly: state.friendly,
            enemies: snapshot(&state),
            action,
            agent,
            was_random: false,
            reward: out.reward,
            scenario: out.scenario,
            detected: out.reward.detected,
        });
        obs = out.observation;
        if let Some(t) = out.terminal {
            break t;
        }
    };
    Ok(EpisodeLog {
        policy: policy.kind(),
        seed,
        config_hash: config_hash(world)?,
        dt,
        scene: Scene::of(world),
        initial_friendly,
        initial_enemies,
        steps,
        outcome,
        predictions: driver.predictions(),
    })
}

/// Number of undetected-to-detected transitions (the flag is taken as
/// clear before the first step) and the time spent detected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub count: u32,
    pub seconds: f64,
}

pub fn exposure_from_flags(flags: &[bool], dt: f64) -> Exposure {
    let mut count = 0;
    let mut detected = 0u32;
    let mut prev = false;
    for &f in flags {
        if f && !prev {
            count += 1;
        }
        if f {
            detected += 1;
        }
        prev = f;
    }
    Exposure {
        count,
        seconds: dt * f64::from(detected),
    }
}

pub fn exposure_metrics(log: &EpisodeLog) -> Exposure {
    exposure_from_flags(&log.detection_flags(), log.dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl RewardStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("reward statistics need at least one value"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
            min: sorted[0],
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        })
    }
}

/// Linear interpolation between closest ranks of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeFractions {
    pub success: f64,
    pub fail_attack: f64,
    pub fail_out_of_bounds: f64,
    pub fail_timeout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentFractions {
    pub nav: f64,
    pub main: f64,
    pub eva: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFractions {
    pub safe_cruise: f64,
    pub preemptive_stealth: f64,
    pub hostile_breakthrough: f64,
}

/// One row per episode so reports over shared seeds can be paired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub outcome: Terminal,
    pub reward: f64,
    pub steps: usize,
    pub exposure_count: u32,
    pub exposure_seconds: f64,
    pub positive_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: PolicyKind,
    pub config_hash: String,
    pub episode_count: usize,
    pub seeds: Vec<u64>,
    pub success_rate: f64,
    pub outcomes: OutcomeFractions,
    /// Mean exposure entries per episode.
    pub aec: f64,
    /// Mean exposed seconds per episode.
    pub aet: f64,
    /// Absent for policies without an intent predictor.
    pub prediction_accuracy: Option<f64>,
    pub reward: RewardStats,
    pub mean_steps_to_success: Option<f64>,
    pub mean_positive_steps: f64,
    pub agent_fractions: Option<AgentFractions>,
    pub scenario_fractions: ScenarioFractions,
    pub episodes: Vec<EpisodeSummary>,
}

impl MetricsReport {
    /// Aggregates `logs` in ascending seed order, so the result does not
    /// depend on the order they are given in.
    pub fn from_logs(logs: &[EpisodeLog]) -> Result<Self> {
        if logs.is_empty() {
            return Err(Error::validation("metrics need at least one episode"));
        }
        let mut order: Vec<&EpisodeLog> = logs.iter().collect();
        order.sort_by_key(|l| l.seed);
        let policy = order[0].policy;
        if order.iter().any(|l| l.policy != policy) {
            return Err(Error::validation("metrics mix episodes of different policies"));
        }
        let n = order.len() as f64;
        let mut outcome_counts = [0usize; 4];
        let mut summaries = Vec::with_capacity(order.len());
        let (mut exp_count, mut exp_secs, mut positive) = (0.0, 0.0, 0.0);
        let (mut success_steps, mut successes) = (0.0, 0usize);
        let mut agents = [0u64; 3];
        let mut any_agent = false;
        let mut scenarios = [0u64; 3];
        let mut total_steps = 0u64;
        let mut tally = PredictionTally::default();
        let mut has_predictor = false;
        let mut rewards = Vec::with_capacity(order.len());
        for log in &order {
            let exposure = exposure_metrics(log);
            let reward = log.total_reward();
            rewards.push(reward);
            outcome_counts[match log.outcome {
                Terminal::Success => 0,
                Terminal::FailAttack => 1,
                Terminal::FailOutOfBounds => 2,
                Terminal::FailTimeout => 3,
            }] += 1;
            if log.outcome.is_success() {
                successes += 1;
                success_steps += log.steps.len() as f64;
            }
            exp_count += f64::from(exposure.count);
            exp_secs += exposure.seconds;
            positive += log.positive_steps() as f64;
            for s in &log.steps {
                if let Some(a) = s.agent {
                    agents[a.index()] += 1;
                    any_agent = true;
                }
                scenarios[s.scenario.index()] += 1;
            }
            total_steps += log.steps.len() as u64;
            if let Some(t) = log.predictions {
                has_predictor = true;
                tally.within += t.within;
                tally.total += t.total;
            }
            summaries.push(EpisodeSummary {
                seed: log.seed,
                outcome: log.outcome,
                reward,
                steps: log.steps.len(),
                exposure_count: exposure.count,
                exposure_seconds: exposure.seconds,
                positive_steps: log.positive_steps(),
            });
        }
        let frac = |c: usize| c as f64 / n;
        let agent_total = agents.iter().sum::<u64>() as f64;
        let step_total = total_steps.max(1) as f64;
        Ok(Self {
            policy,
            config_hash: order[0].config_hash.clone(),
            episode_count: order.len(),
            seeds: order.iter().map(|l| l.seed).collect(),
            success_rate: frac(outcome_counts[0]),
            outcomes: OutcomeFractions {
                success: frac(outcome_counts[0]),
                fail_attack: frac(outcome_counts[1]),
                fail_out_of_bounds: frac(outcome_counts[2]),
                fail_timeout: frac(outcome_counts[3]),
            },
            aec: exp_count / n,
            aet: exp_secs / n,
            prediction_accuracy: (has_predictor && tally.total > 0).then(|| tally.within as f64 / tally.total as f64),
            reward: RewardStats::from_values(&rewards)?,
            mean_steps_to_success: (successes > 0).then(|| success_steps / successes as f64),
            mean_positive_steps: positive / n,
            agent_fractions: any_agent.then(|| AgentFractions {
                nav: agents[0] as f64 / agent_total,
                main: agents[1] as f64 / agent_total,
                eva: agents[2] as f64 / agent_total,
            }),
            scenario_fractions: ScenarioFractions {
                safe_cruise: scenarios[0] as f64 / step_total,
                preemptive_stealth: scenarios[1] as f64 / step_total,
                hostile_breakthrough: scenarios[2] as f64 / step_total,
            },
            episodes: summaries,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarlo {
    pub report: MetricsReport,
    /// In seed order.
    pub logs: Vec<EpisodeLog>,
}

/// Runs seeds `seed_base..seed_base + episodes` on up to `threads` workers
/// (0 means one per available core) and reduces in seed order.
pub fn monte_carlo(
    policy: &Policy,
    env: &Environment,
    episodes: usize,
    seed_base: u64,
    threads: usize,
) -> Result<MonteCarlo> {
    if episodes == 0 {
        return Err(Error::validation("eval.episodes: must be at least 1"));
    }
    policy.check_world(env.config())?;
    let workers = match threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(episodes);
    let run = |i: usize| run_episode(policy, env, seed_base + i as u64);
    let logs: Vec<EpisodeLog> = if workers <= 1 {
        (0..episodes).map(run).collect::<Result<_>>()?
    } else {
        let mut slots: Vec<Option<Result<EpisodeLog>>> = (0..episodes).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let run = &run;
                    scope.spawn(move || (w..episodes).step_by(workers).map(|i| (i, run(i))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("evaluation worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every episode ran"))
            .collect::<Result<_>>()?
    };
    let report = MetricsReport::from_logs(&logs)?;
    Ok(MonteCarlo { report, logs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub mean: f64,
    pub std: f64,
}

/// Cross-run mean and standard deviation of per-episode reward, each
/// smoothed with a trailing moving average of `window` episodes.
pub fn learning_curve(runs: &[Vec<f64>], window: usize) -> Result<Vec<CurvePoint>> {
    if runs.is_empty() {
        return Err(Error::validation("learning curve needs at least one run"));
    }
    if window == 0 {
        return Err(Error::validation("learning curve window must be positive"));
    }
    let len = runs[0].len();
    if let Some(bad) = runs.iter().position(|r| r.len() != len) {
        return Err(Error::validation(format!(
            "run {bad} has {} episodes, run 0 has {len}",
            runs[bad].len()
        )));
    }
    let k = runs.len() as f64;
    let mut means = Vec::with_capacity(len);
    let mut stds = Vec::with_capacity(len);
    for e in 0..len {
        let m = runs.iter().map(|r| r[e]).sum::<f64>() / k;
        let v = runs.iter().map(|r| (r[e] - m).powi(2)).sum::<f64>() / k;
        means.push(m);
        stds.push(v.sqrt());
    }
    let smooth = |xs: &[f64], e: usize| {
        let lo = (e + 1).saturating_sub(window);
        xs[lo..=e].iter().sum::<f64>() / (e + 1 - lo) as f64
    };
    Ok((0..len)
        .map(|e| CurvePoint {
            episode: e,
            mean: smooth(&means, e),
            std: smooth(&stds, e),
        })
        .collect())
}

pub const CURVE_HEADER: &str = "episode,mean_reward,std_reward";

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.episode, p.mean, p.std));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_world() -> WorldConfig {
        let mut w = WorldConfig::desk_scale();
        w.enemies.count = 0;
        w
    }

    #[test]
    fn greedy_reaches_an_undefended_target() {
        let env = Environment::new(quiet_world()).unwrap();
        let log = run_episode(&Policy::Greedy, &env, 3).unwrap();
        assert_eq!(log.outcome, Terminal::Success);
        assert_eq!(exposure_metrics(&log), Exposure { count: 0, seconds: 0.0 });
        assert!(log.steps.len() as u32 <= env.config().max_steps);
    }

    #[test]
    fn held_friendly_times_out() {
        let env = Environment::new(quiet_world()).unwrap();
        let opts = EpisodeOptions { hold_friendly: true };
        let log = run_episode_with(&Policy::Greedy, &env, 1, opts).unwrap();
        assert_eq!(log.outcome, Terminal::FailTimeout);
        assert_eq!(log.steps.len() as u32, env.config().max_steps);
    }

    #[test]
    fn episodes_are_deterministic_and_round_trip() {
        let env = Environment::new(WorldConfig::desk_scale()).unwrap();
        let policy = Policy::GameTheory(GameTheoryParams { horizon: 2 });
        let a = run_episode(&policy, &env, 11).unwrap();
        let b = run_episode(&policy, &env, 11).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        b.write_jsonl(&mut buf).unwrap();
        let back = EpisodeLog::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, vec![a.clone(), a]);
    }

    #[test]
    fn malformed_jsonl_is_rejected() {
        assert!(EpisodeLog::read_jsonl(&b"{\"record\":\"end\",\"outcome\":\"success\",\"steps\":0}\n"[..]).is_err());
        assert!(EpisodeLog::read_jsonl(&b"not json\n"[..]).is_err());
    }

    #[test]
    fn exposure_examples() {
        let mut flags = vec![false; 20];
        for f in &mut flags[10..15] {
            *f = true;
        }
        assert_eq!(exposure_from_flags(&flags, 0.5), Exposure { count: 1, seconds: 2.5 });
        let mut flags = vec![false; 20];
        for i in [10, 11, 12, 14] {
            flags[i] = true;
        }
        assert_eq!(exposure_from_flags(&flags, 1.0).count, 2);
    }

    #[test]
    fn single_episode_report() {
        let env = Environment::new(quiet_world()).unwrap();
        let mc = monte_carlo(&Policy::Greedy, &env, 1, 5, 1).unwrap();
        let r = &mc.report.reward;
        assert_eq!(mc.report.episode_count, 1);
        assert!(r.min == r.q1 && r.q1 == r.median && r.median == r.q3 && r.q3 == r.max);
        assert_eq!(mc.report.prediction_accuracy, None);
        assert_eq!(mc.report.agent_fractions, None);
        assert!(monte_carlo(&Policy::Greedy, &env, 0, 5, 1).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let s = RewardStats::from_values(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
    }

    #[test]
    fn curve_examples() {
        let run = vec![1.0, 5.0, 3.0, 7.0];
        let c = learning_curve(&[run.clone()], 1).unwrap();
        assert_eq!(c.iter().map(|p| p.mean).collect::<Vec<_>>(), run);
        let c = learning_curve(&[run.clone()], 2).unwrap();
        assert_eq!(c.iter().map(|p| p.mean).collect::<Vec<_>>(), vec![1.0, 3.0, 4.0, 5.0]);
        let flat = learning_curve(&[vec![2.0; 5], vec![2.0; 5]], 3).unwrap();
        assert!(flat.iter().all(|p| p.mean == 2.0 && p.std == 0.0));
        assert!(learning_curve(&[vec![1.0], vec![1.0, 2.0]], 1).is_err());
        assert_eq!(curve_csv(&c).lines().count(), 5);
    }

    #[test]
    fn policy_names() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
        }
        assert_eq!("gt".parse::<PolicyKind>().unwrap(), PolicyKind::GameTheory);
        assert!("nope".parse::<PolicyKind>().is_err());
    }
}
