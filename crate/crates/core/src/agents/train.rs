use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AgentId, AgentSpec, DqnAgent, DqnConfig, EnsembleController, EpsilonSchedule, InputMode, ReplayBuffer, Transition};
use crate::environment::{Environment, Observation, WorldConfig, WorldState};
use crate::error::{Error, Result};
use crate::intent::{
    augment_state, augmented_len, IntentConfig, IntentPredictor, IntentSampleBuffer, IntentTracker, PredictedState,
    TrackerUpdate,
};
use crate::neuralnet::Checkpoint;
use crate::seeds;

const STREAM_INIT: u64 = 0;
const STREAM_REPLAY: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
const STREAM_INTENT: u64 = 3;
const STREAM_EPISODE: u64 = 4;
const STREAM_PRETRAIN: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Intent-augmented three-expert ensemble.
    Icsrl,
    /// The ensemble without intent prediction.
    CaDdqn,
    /// One dueling agent with balanced weights.
    Ddqn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Icsrl, Algorithm::CaDdqn, Algorithm::Ddqn];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Icsrl => "icsrl",
            Algorithm::CaDdqn => "ca_ddqn",
            Algorithm::Ddqn => "ddqn",
        }
    }

    pub fn uses_intent(self) -> bool {
        self == Algorithm::Icsrl
    }

    pub fn agent_ids(self) -> &'static [AgentId] {
        match self {
            Algorithm::Ddqn => &[AgentId::Main],
            _ => &AgentId::ALL,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "icsrl" | "ics_rl" | "ics-rl" => Ok(Algorithm::Icsrl),
            "ca" | "ca_ddqn" | "ca-ddqn" => Ok(Algorithm::CaDdqn),
            "ddqn" => Ok(Algorithm::Ddqn),
            other => Err(Error::Validation(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Share of episodes in which the experts train one at a time before
    /// the ensemble takes over.
    pub phase1_fraction: f64,
    pub buffer_capacity: usize,
    pub min_fill: usize,
    pub dqn: DqnConfig,
    pub epsilon: EpsilonSchedule,
    pub intent: IntentConfig,
    /// Random-action rollouts used to train the predictor before learning.
    #[serde(default)]
    pub predictor_pretrain_episodes: usize,
    /// In the ensemble phase, bootstrap each expert from the action the
    /// switching rule takes in the successor state instead of its own
    /// greedy action.
    #[serde(default = "yes")]
    pub joint_bootstrap: bool,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        Self {
            episodes: 40_000,
            phase1_fraction: 0.5,
            buffer_capacity: 500_000,
            min_fill: 5000,
            dqn: DqnConfig::default(),
            epsilon: EpsilonSchedule::default(),
            intent: IntentConfig::default(),
            predictor_pretrain_episodes: 0,
            joint_bootstrap: true,
        }
    }

    pub fn desk_scale() -> Self {
        Self {
            episodes: 3000,
            buffer_capacity: 100_000,
            dqn: DqnConfig {
                hidden: vec![64, 64],
                learning_rate: 1e-3,
                batch_size: 64,
                ..DqnConfig::default()
            },
            intent: IntentConfig {
                hidden: 32,
                batch_size: 16,
                train_interval: 4,
                sample_capacity: 20_000,
                ..IntentConfig::default()
            },
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::validation("train.episodes: must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.phase1_fraction) {
            return Err(Error::validation("train.phase1_fraction: must lie in [0, 1]"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::validation("train.buffer_capacity: must be positive"));
        }
        if self.min_fill > self.buffer_capacity {
            return Err(Error::validation("train.min_fill: exceeds buffer_capacity"));
        }
        if self.min_fill < self.dqn.batch_size.min(self.buffer_capacity) {
            return Err(Error::validation("train.min_fill: must hold at least one batch"));
        }
        self.dqn.validate()?;
        self.epsilon.validate()?;
        self.intent.validate()
    }

    pub fn phase1_episodes(&self, algorithm: Algorithm) -> usize {
        match algorithm {
            Algorithm::Ddqn => 0,
            _ => (self.phase1_fraction * self.episodes as f64).round() as usize,
        }
    }
}

/// Observation variants handed to the agents on one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInputs {
    pub base: Vec<f64>,
    pub augmented: Option<Vec<f64>>,
    pub predictions: Vec<Option<PredictedState>>,
}

impl PolicyInputs {
    /// The vector stored in replay.
    pub fn stored(&self) -> &[f64] {
        self.augmented.as_deref().unwrap_or(&self.base)
    }
}

/// A trained (or freshly initialized) controller with its optional intent
/// predictor.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub algorithm: Algorithm,
    pub controller: EnsembleController,
    pub predictor: Option<IntentPredictor>,
    pub intent: IntentConfig,
}

impl LearnedPolicy {
    pub fn new(algorithm: Algorithm, world: &WorldConfig, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, STREAM_INIT, 0));
        let actions = world.actions.accel_levels.len() * world.actions.turn_levels.len();
        let base = world.observation_len();
        let mut agents = Vec::new();
        for &id in algorithm.agent_ids() {
            let (mode, dim) = if algorithm.uses_intent() && id == AgentId::Main {
                (InputMode::Augmented, augmented_len(world))
            } else {
                (InputMode::Base, base)
            };
            let spec = AgentSpec::new(id, mode, dim, actions, &cfg.dqn);
            agents.push(DqnAgent::new(spec, &mut rng)?);
        }
        let predictor = if algorithm.uses_intent() {
            Some(IntentPredictor::for_world(&cfg.intent, world, &mut rng)?)
        } else {
            None
        };
        Ok(Self {
            algorithm,
            controller: EnsembleController::new(agents)?,
            predictor,
            intent: cfg.intent.clone(),
        })
    }

    pub fn new_tracker(&self, world: &WorldConfig) -> Option<IntentTracker> {
        self.predictor
            .as_ref()
            .map(|p| IntentTracker::new(world.enemies.count, p.window()))
    }

    /// Builds the observation variants, issuing forecasts through `tracker`.
    pub fn inputs(
        &self,
        world: &WorldConfig,
        state: &WorldState,
        obs: &Observation,
        tracker: Option<&mut IntentTracker>,
    ) -> Result<PolicyInputs> {
        match (&self.predictor, tracker) {
            (Some(p), Some(t)) => {
                let predictions = t.predict(p, obs)?;
                let augmented = augment_state(obs, &predictions, &state.friendly, world)?;
                Ok(PolicyInputs {
                    base: obs.values.clone(),
                    augmented: Some(augmented),
                    predictions,
                })
            }
            (Some(_), None) => Err(Error::Usage("intent policy stepped without a tracker".into())),
            (None, _) => Ok(PolicyInputs {
                base: obs.values.clone(),
                augmented: None,
                predictions: vec![None; obs.slot_enemies.len()],
            }),
        }
    }

    /// Greedy decision.
    pub fn decide(&self, inputs: &PolicyInputs) -> Result<super::Decision> {
        self.controller.select(&inputs.base, inputs.augmented.as_deref())
    }

    pub fn component_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .controller
            .agents()
            .iter()
            .map(|a| a.id().as_str().to_string())
            .collect();
        if self.predictor.is_some() {
            names.push("predictor".into());
        }
        names
    }

    /// Writes one checkpoint per component plus `controller.json`.
    /// Returns the written paths.
    pub fn save(&self, dir: &Path, metadata: &Value) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for agent in self.controller.agents() {
            let mut meta = metadata.clone();
            tag(&mut meta, agent.id().as_str());
            let path = dir.join(format!("{}.ckpt", agent.id().as_str()));
            agent.to_checkpoint(meta)?.save(&path)?;
            written.push(path);
        }
        if let Some(p) = &self.predictor {
            let mut meta = metadata.clone();
            tag(&mut meta, "predictor");
            let path = dir.join("predictor.ckpt");
            p.to_checkpoint(meta)?.save(&path)?;
            written.push(path);
        }
        let controller = json!({
            "algorithm": self.algorithm,
            "agents": self.controller.agents().iter().map(|a| a.id()).collect::<Vec<_>>(),
            "intent": self.intent,
            "metadata": metadata,
        });
        let path = dir.join("controller.json");
        fs::write(&path, serde_json::to_string_pretty(&controller)? + "\n")?;
        written.push(path);
        Ok(written)
    }

    /// Loads a policy written by [`Self::save`]. Returns it with the saved
    /// metadata.
    pub fn load(dir: &Path, world: &WorldConfig) -> Result<(Self, Value)> {
        let text = fs::read_to_string(dir.join("controller.json"))?;
        let doc: Value = serde_json::from_str(&text)?;
        let algorithm: Algorithm = serde_json::from_value(doc["algorithm"].clone())?;
        let ids: Vec<AgentId> = serde_json::from_value(doc["agents"].clone())?;
        let intent: IntentConfig = serde_json::from_value(doc["intent"].clone())?;
        let mut agents = Vec::new();
        for id in ids {
            let ck = Checkpoint::load(&dir.join(format!("{}.ckpt", id.as_str())))?;
            let agent = DqnAgent::from_checkpoint(&ck)?;
            if agent.id() != id {
                return Err(Error::Format(format!("{}.ckpt holds agent {}", id.as_str(), agent.id().as_str())));
            }
            agents.push(agent);
        }
        let predictor = if algorithm.uses_intent() {
            let ck = Checkpoint::load(&dir.join("predictor.ckpt"))?;
            let mut p = IntentPredictor::for_world(&intent, world, &mut rand::rngs::mock::StepRng::new(0, 0))?;
            p.load_checkpoint(&ck)?;
            Some(p)
        } else {
            None
        };
        let policy = Self {
            algorithm,
            controller: EnsembleController::new(agents)?,
            predictor,
            intent,
        };
        let expected = if algorithm.uses_intent() { augmented_len(world) } else { world.observation_len() };
        for a in policy.controller.agents() {
            let want = if a.input_mode() == InputMode::Augmented { expected } else { world.observation_len() };
            if a.input_dim() != want {
                return Err(Error::Validation(format!(
                    "agent {} expects {} inputs but the world produces {want}",
                    a.id().as_str(),
                    a.input_dim()
                )));
            }
        }
        Ok((policy, doc["metadata"].clone()))
    }
}

fn tag(meta: &mut Value, component: &str) {
    if let Value::Object(map) = meta {
        map.insert("component".into(), component.into());
    }
}

/// One training-log row per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    pub episode: usize,
    pub phase: u8,
    /// Expert in control during phase 1, `ensemble` afterwards.
    pub controller: String,
    pub reward: f64,
    pub steps: u32,
    pub outcome: String,
    pub activations_nav: u64,
    pub activations_main: u64,
    pub activations_eva: u64,
    pub epsilon: f64,
    pub td_loss: Option<f64>,
    pub predictor_loss: Option<f64>,
    pub positive_steps: u32,
    pub exposure_count: u32,
}

pub const TRAINING_LOG_HEADER: &str = "episode,phase,controller,reward,steps,outcome,activations_nav,activations_main,activations_eva,epsilon,td_loss,predictor_loss,positive_steps,exposure_count";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainingLogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.phase,
            self.controller,
            self.reward,
            self.steps,
            self.outcome,
            self.activations_nav,
            self.activations_main,
            self.activations_eva,
            self.epsilon,
            opt(self.td_loss),
            opt(self.predictor_loss),
            self.positive_steps,
            self.exposure_count
        )
    }
}

pub struct TrainOutcome {
    pub policy: LearnedPolicy,
    pub log: Vec<TrainingLogRow>,
}

fn diverged(episode: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("training diverged in episode {episode}: {msg}")),
        other => other,
    }
}

struct IntentTraining {
    samples: IntentSampleBuffer,
    rng: ChaCha8Rng,
    steps: u64,
}

impl IntentTraining {
    fn absorb(&mut self, update: TrackerUpdate) {
        for s in update.samples {
            self.samples.push(s);
        }
    }

    fn tick(&mut self, predictor: &mut IntentPredictor, cfg: &IntentConfig) -> Result<Option<f64>> {
        self.steps += 1;
        if self.samples.len() < cfg.min_samples.max(1) || self.steps % u64::from(cfg.train_interval) != 0 {
            return Ok(None);
        }
        let batch = self.samples.sample(cfg.batch_size, &mut self.rng);
        predictor.train_batch(&batch).map(Some)
    }
}

fn pretrain_predictor(
    env: &Environment,
    predictor: &mut IntentPredictor,
    cfg: &TrainConfig,
    intent: &mut IntentTraining,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, STREAM_PRETRAIN, 0));
    for e in 0..cfg.predictor_pretrain_episodes {
        let (mut state, _) = env.reset(seeds::derive(seed, STREAM_PRETRAIN, 1 + e as u64))?;
        let mut tracker = IntentTracker::new(env.config().enemies.count, predictor.window());
        intent.absorb(tracker.observe(env, &state));
        while state.terminal.is_none() {
            let a = rng.gen_range(0..env.action_count());
            env.step(&mut state, a)?;
            intent.absorb(tracker.observe(env, &state));
            intent.tick(predictor, &cfg.intent).map_err(|err| diverged(e, err))?;
        }
    }
    Ok(())
}

/// Trains `algorithm` on `world`. Fully determined by its arguments.
pub fn train(world: &WorldConfig, cfg: &TrainConfig, algorithm: Algorithm, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let env = Environment::new(world.clone())?;
    let mut policy = LearnedPolicy::new(algorithm, world, cfg, seed)?;
    let mut replay = ReplayBuffer::new(cfg.buffer_capacity, cfg.min_fill, seeds::derive(seed, STREAM_REPLAY, 0))?;
    let mut explore = ChaCha8Rng::seed_from_u64(seeds::derive(seed, STREAM_EXPLORE, 0));
    let mut intent = IntentTraining {
        samples: IntentSampleBuffer::new(cfg.intent.sample_capacity),
        rng: ChaCha8Rng::seed_from_u64(seeds::derive(seed, STREAM_INTENT, 0)),
        steps: 0,
    };
    if let Some(p) = policy.predictor.as_mut() {
        pretrain_predictor(&env, p, cfg, &mut intent, seed)?;
    }
    let phase1 = cfg.phase1_episodes(algorithm);
    let base_len = world.observation_len();
    let mut log = Vec::with_capacity(cfg.episodes);

    for e in 0..cfg.episodes {
        let epsilon = cfg.epsilon.value(e, cfg.episodes);
        let expert = if e < phase1 { Some(AgentId::ALL[e % AgentId::ALL.len()]) } else { None };
        let (mut state, mut obs) = env.reset(seeds::derive(seed, STREAM_EPISODE, e as u64))?;
        let mut tracker = policy.new_tracker(world);
        if let Some(t) = tracker.as_mut() {
            intent.absorb(t.observe(&env, &state));
        }
        let mut inputs = policy.inputs(world, &state, &obs, tracker.as_mut())?;
        policy.controller.reset_activations();
        let (mut reward_sum, mut steps, mut positive, mut exposures) = (0.0, 0u32, 0u32, 0u32);
        let (mut td_sum, mut td_n, mut pl_sum, mut pl_n) = (0.0, 0u32, 0.0, 0u32);
        let mut was_detected = env.is_detected(&state);
        let outcome = loop {
            let decision = match expert {
                Some(id) => {
                    let agent = policy.controller.agent(id).expect("ensemble holds every expert");
                    let x = agent.choose_input(&inputs.base, inputs.augmented.as_deref())?;
                    let mut action = agent.greedy_action(x)?;
                    let random = explore.gen::<f64>() < epsilon;
                    if random {
                        action = explore.gen_range(0..env.action_count());
                    }
                    super::Decision {
                        agent: id,
                        action,
                        was_random: random,
                    }
                }
                None => policy
                    .controller
                    .act(&inputs.base, inputs.augmented.as_deref(), epsilon, &mut explore)?,
            };
            let out = env.step(&mut state, decision.action)?;
            if let Some(t) = tracker.as_mut() {
                intent.absorb(t.observe(&env, &state));
            }
            obs = out.observation;
            let next_inputs = policy.inputs(world, &state, &obs, tracker.as_mut())?;
            let terminal = out.terminal.is_some_and(|t| t.ends_episode_dynamics());
            replay.push(Transition {
                state: inputs.stored().to_vec(),
                action: decision.action,
                reward: out.reward,
                next_state: next_inputs.stored().to_vec(),
                terminal,
                agent: decision.agent,
                scenario: out.scenario,
                base_len,
            });
            steps += 1;
            let r = out.reward.total();
            reward_sum += r;
            if r > 0.0 {
                positive += 1;
            }
            if out.reward.detected && !was_detected {
                exposures += 1;
            }
            was_detected = out.reward.detected;
            if expert.is_some() {
                policy.controller.record_activation(decision.agent);
            }

            if replay.is_ready() {
                let batch = replay.sample(cfg.dqn.batch_size)?;
                let joint = (expert.is_none() && cfg.joint_bootstrap && policy.controller.agents().len() > 1)
                    .then(|| policy.controller.next_actions(&batch))
                    .transpose()?;
                let agent = policy
                    .controller
                    .agent_mut(decision.agent)
                    .expect("acting agent belongs to the ensemble");
                let loss = agent
                    .td_update_with(&batch, joint.as_deref())
                    .map_err(|err| diverged(e, err))?;
                td_sum += loss;
                td_n += 1;
            }
            if let Some(p) = policy.predictor.as_mut() {
                if let Some(l) = intent.tick(p, &cfg.intent).map_err(|err| diverged(e, err))? {
                    pl_sum += l;
                    pl_n += 1;
                }
            }
            inputs = next_inputs;
            if let Some(t) = out.terminal {
                break t;
            }
        };
        let acts = policy.controller.activations();
        log.push(TrainingLogRow {
            episode: e,
            phase: if expert.is_some() { 1 } else { 2 },
            controller: expert.map_or("ensemble", AgentId::as_str).to_string(),
            reward: reward_sum,
            steps,
            outcome: outcome.as_str().to_string(),
            activations_nav: acts[0],
            activations_main: acts[1],
            activations_eva: acts[2],
            epsilon,
            td_loss: (td_n > 0).then(|| td_sum / f64::from(td_n)),
            predictor_loss: (pl_n > 0).then(|| pl_sum / f64::from(pl_n)),
            positive_steps: positive,
            exposure_count: exposures,
        });
    }
    policy.controller.reset_activations();
    Ok(TrainOutcome { policy, log })
}
