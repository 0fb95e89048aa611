//! Enemy intent prediction: per-enemy sliding observation windows, an LSTM
//! next-state forecaster, and observation augmentation with its forecasts.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{EnemyUnit, Environment, Observation, WorldConfig, WorldState};
use crate::error::{check_len, Error, Result};
use crate::neuralnet::{
    mse_loss, Activation, Adam, AdamConfig, Checkpoint, Dense, DenseSpec, Lstm, LstmSpec, Matrix, ParameterBlock,
    Parameterized,
};
use crate::simcore::{UavState, Vec2};

/// Observed features per enemy and step: world position (m), velocity
/// (m/s) and heading (rad).
pub const ENEMY_FEATURES: usize = 5;
/// Predicted state: position, velocity and heading.
pub const PREDICTED_DIM: usize = 5;
/// Augmentation values per slot: the prediction plus a valid flag.
pub const AUGMENT_SLOT_FEATURES: usize = PREDICTED_DIM + 1;

pub type EnemyFeatures = [f64; ENEMY_FEATURES];

pub fn enemy_features(unit: &EnemyUnit) -> EnemyFeatures {
    let v = unit.state.velocity();
    let p = unit.state.position;
    [p.x, p.y, v.x, v.y, unit.state.heading]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntentConfig {
    pub window: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Environment steps between predictor updates.
    pub train_interval: u32,
    /// Samples required before the predictor starts training.
    pub min_samples: usize,
    pub sample_capacity: usize,
    /// Position error (m) under which a prediction counts as accurate.
    pub accuracy_threshold: f64,
}

impl Default for IntentConfig {
    fn default() -> Self {
        Self {
            window: 8,
            hidden: 64,
            learning_rate: 1e-3,
            batch_size: 64,
            train_interval: 1,
            min_samples: 1000,
            sample_capacity: 50_000,
            accuracy_threshold: 100.0,
        }
    }
}

impl IntentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::Validation(format!("intent.{f}: {m}")));
        if self.window == 0 {
            return bad("window", "must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden", "must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.train_interval == 0 {
            return bad("train_interval", "must be at least 1");
        }
        if self.sample_capacity < self.batch_size {
            return bad("sample_capacity", "must hold at least one batch");
        }
        if !(self.accuracy_threshold > 0.0) {
            return bad("accuracy_threshold", "must be positive");
        }
        Ok(())
    }
}

/// Fixed-length history of one enemy's observed features.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    capacity: usize,
    entries: VecDeque<EnemyFeatures>,
}

impl TrajectoryWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill(&self) -> usize {
        self.entries.len()
    }

    pub fn is_ready(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn push(&mut self, features: EnemyFeatures) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(features);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn latest(&self) -> Option<&EnemyFeatures> {
        self.entries.back()
    }

    /// Oldest first. Errors until the window is full.
    pub fn sequence(&self) -> Result<Vec<EnemyFeatures>> {
        if !self.is_ready() {
            return Err(Error::Usage(format!(
                "trajectory window holds {} of {} observations",
                self.entries.len(),
                self.capacity
            )));
        }
        Ok(self.entries.iter().copied().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub heading: f64,
}

/// One supervised pair: a full window and the features one step later.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentSample {
    pub history: Vec<EnemyFeatures>,
    pub next: EnemyFeatures,
}

/// LSTM over the window followed by a linear read-out.
///
/// Positions enter relative to the newest observation, in units of
/// `position_scale` metres; velocities are divided by `velocity_scale`
/// and headings by pi. The read-out predicts the next step in the same
/// units.
#[derive(Debug, Clone)]
pub struct IntentPredictor {
    pub lstm: Lstm,
    pub out: Dense,
    adam: Adam,
    window: usize,
    position_scale: f64,
    velocity_scale: f64,
    updates: u64,
}

impl IntentPredictor {
    /// `velocity_ref` is the enemy top speed and `dt` the step length.
    pub fn new<R: Rng + ?Sized>(config: &IntentConfig, velocity_ref: f64, dt: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if !(velocity_ref > 0.0 && dt > 0.0) {
            return Err(Error::validation("intent predictor needs positive velocity_ref and dt"));
        }
        let lstm = Lstm::new(
            LstmSpec {
                input_dim: ENEMY_FEATURES,
                hidden_dim: config.hidden,
            },
            "lstm",
            rng,
        )?;
        let out = Dense::new(
            DenseSpec {
                in_dim: config.hidden,
                out_dim: PREDICTED_DIM,
                activation: Activation::Identity,
            },
            "out",
            rng,
        )?;
        let mut blocks: Vec<&ParameterBlock> = lstm.blocks();
        blocks.extend(out.blocks());
        let adam = Adam::new(AdamConfig::with_learning_rate(config.learning_rate), &blocks);
        Ok(Self {
            lstm,
            out,
            adam,
            window: config.window,
            position_scale: velocity_ref * dt * config.window as f64 / 2.0,
            velocity_scale: velocity_ref,
            updates: 0,
        })
    }

    pub fn for_world<R: Rng + ?Sized>(config: &IntentConfig, world: &WorldConfig, rng: &mut R) -> Result<Self> {
        Self::new(config, world.enemies.limits.v_max, world.enemies.limits.dt, rng)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn encode_step(&self, f: &EnemyFeatures, origin: &EnemyFeatures) -> [f64; ENEMY_FEATURES] {
        [
            (f[0] - origin[0]) / self.position_scale,
            (f[1] - origin[1]) / self.position_scale,
            f[2] / self.velocity_scale,
            f[3] / self.velocity_scale,
            f[4] / PI,
        ]
    }

    fn decode(&self, origin: &EnemyFeatures, y: &[f64]) -> PredictedState {
        PredictedState {
            position: Vec2::new(
                origin[0] + y[0] * self.position_scale,
                origin[1] + y[1] * self.position_scale,
            ),
            velocity: Vec2::new(y[2] * self.velocity_scale, y[3] * self.velocity_scale),
            heading: y[4] * PI,
        }
    }

    fn check_history(&self, history: &[EnemyFeatures]) -> Result<()> {
        if history.len() != self.window {
            return Err(Error::Usage(format!(
                "intent predictor expects a window of {} observations, got {}",
                self.window,
                history.len()
            )));
        }
        Ok(())
    }

    /// Time-major input matrices for a batch of histories.
    fn encode_batch(&self, histories: &[&[EnemyFeatures]]) -> Result<Vec<Matrix>> {
        for h in histories {
            self.check_history(h)?;
        }
        let b = histories.len();
        let mut steps = Vec::with_capacity(self.window);
        for t in 0..self.window {
            let mut m = Matrix::zeros(b, ENEMY_FEATURES);
            for (r, h) in histories.iter().enumerate() {
                let origin = &h[self.window - 1];
                m.row_mut(r).copy_from_slice(&self.encode_step(&h[t], origin));
            }
            steps.push(m);
        }
        Ok(steps)
    }

    /// Network output (normalized units) for each history.
    pub fn forward_raw(&self, histories: &[&[EnemyFeatures]]) -> Result<Matrix> {
        if histories.is_empty() {
            return Ok(Matrix::zeros(0, PREDICTED_DIM));
        }
        let inputs = self.encode_batch(histories)?;
        let cache = self.lstm.forward_sequence(&inputs)?;
        self.out.forward(&cache.h)
    }

    pub fn predict_batch(&self, histories: &[&[EnemyFeatures]]) -> Result<Vec<PredictedState>> {
        let y = self.forward_raw(histories)?;
        Ok(histories
            .iter()
            .enumerate()
            .map(|(r, h)| self.decode(&h[self.window - 1], y.row(r)))
            .collect())
    }

    pub fn predict_next(&self, window: &TrajectoryWindow) -> Result<PredictedState> {
        let seq = window.sequence()?;
        Ok(self.predict_batch(&[&seq])?[0])
    }

    fn encode_target(&self, history: &[EnemyFeatures], next: &EnemyFeatures) -> [f64; ENEMY_FEATURES] {
        self.encode_step(next, &history[self.window - 1])
    }

    fn encode_targets(&self, batch: &[&IntentSample]) -> Matrix {
        let mut target = Matrix::zeros(batch.len(), PREDICTED_DIM);
        for (r, s) in batch.iter().enumerate() {
            target
                .row_mut(r)
                .copy_from_slice(&self.encode_target(&s.history, &s.next));
        }
        target
    }

    /// Training loss over `samples` without touching the parameters.
    pub fn mse(&self, samples: &[&IntentSample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Usage("intent loss needs at least one sample".into()));
        }
        let histories: Vec<&[EnemyFeatures]> = samples.iter().map(|s| s.history.as_slice()).collect();
        let pred = self.forward_raw(&histories)?;
        Ok(mse_loss(&pred, &self.encode_targets(samples))?.0)
    }

    /// One Adam step on the mean squared error over `batch`. Returns the
    /// loss before the step.
    pub fn train_batch(&mut self, batch: &[&IntentSample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Usage("intent training batch is empty".into()));
        }
        let histories: Vec<&[EnemyFeatures]> = batch.iter().map(|s| s.history.as_slice()).collect();
        let inputs = self.encode_batch(&histories)?;
        let target = self.encode_targets(batch);
        let cache = self.lstm.forward_sequence(&inputs)?;
        let pred = self.out.forward(&cache.h)?;
        let (loss, grad) = mse_loss(&pred, &target)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "intent predictor loss is {loss} at update {}",
                self.updates
            )));
        }
        self.lstm.zero_grad();
        self.out.zero_grad();
        let dh = self
            .out
            .backward(&cache.h, &pred, &grad, true)?
            .expect("input gradient requested");
        self.lstm.backward_sequence(&cache, &dh)?;
        let mut blocks: Vec<&mut ParameterBlock> = self.lstm.blocks_mut();
        blocks.extend(self.out.blocks_mut());
        self.adam.update(&mut blocks)?;
        self.updates += 1;
        Ok(loss)
    }

    pub fn to_checkpoint(&self, metadata: serde_json::Value) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(metadata);
        ck.push_model("", self)?;
        Ok(ck)
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.load_model("", self)
    }
}

impl Parameterized for IntentPredictor {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        let mut out = self.lstm.blocks();
        out.extend(self.out.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        let mut out = self.lstm.blocks_mut();
        out.extend(self.out.blocks_mut());
        out
    }
}

/// A forecast paired with the state the enemy actually reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub enemy: usize,
    pub predicted: PredictedState,
    pub actual: Option<PredictedState>,
}

impl PredictionRecord {
    pub fn position_error(&self) -> Option<f64> {
        self.actual
            .map(|a| a.position.distance(self.predicted.position))
    }
}

/// Fraction of records whose position error is below `threshold` metres.
pub fn prediction_accuracy(records: &[PredictionRecord], threshold: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::validation("prediction accuracy needs at least one record"));
    }
    let mut hits = 0usize;
    for r in records {
        let err = r
            .position_error()
            .ok_or_else(|| Error::validation(format!("prediction record for enemy {} has no ground truth", r.enemy)))?;
        if err < threshold {
            hits += 1;
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

/// Appends one block per observation slot: the forecast for the slot's
/// enemy (relative position over field size, velocity over friendly top
/// speed, heading over pi) and a valid flag. Slots without a forecast are
/// zero.
pub fn augment_state(
    obs: &Observation,
    predictions: &[Option<PredictedState>],
    friendly: &UavState,
    config: &WorldConfig,
) -> Result<Vec<f64>> {
    check_len("augment_state predictions", obs.slot_enemies.len(), predictions.len())?;
    let f = config.field_size;
    let vref = config.friendly.limits.v_max;
    let mut values = Vec::with_capacity(obs.len() + predictions.len() * AUGMENT_SLOT_FEATURES);
    values.extend_from_slice(&obs.values);
    for p in predictions {
        match p {
            Some(p) => {
                let rel = p.position - friendly.position;
                values.extend_from_slice(&[
                    rel.x / f,
                    rel.y / f,
                    p.velocity.x / vref,
                    p.velocity.y / vref,
                    p.heading / PI,
                    1.0,
                ]);
            }
            None => values.extend_from_slice(&[0.0; AUGMENT_SLOT_FEATURES]),
        }
    }
    Ok(values)
}

pub fn augmented_len(config: &WorldConfig) -> usize {
    config.observation_len() + config.enemy_slots * AUGMENT_SLOT_FEATURES
}

/// Per-episode tracking state: one window per enemy plus the forecasts
/// still waiting for their ground truth.
#[derive(Debug, Clone)]
pub struct IntentTracker {
    windows: Vec<TrajectoryWindow>,
    pending: Vec<Option<(Vec<EnemyFeatures>, Option<PredictedState>)>>,
}

/// What one tracker update produced.
#[derive(Debug, Clone, Default)]
pub struct TrackerUpdate {
    pub samples: Vec<IntentSample>,
    pub records: Vec<PredictionRecord>,
}

impl IntentTracker {
    pub fn new(enemy_count: usize, window: usize) -> Self {
        Self {
            windows: vec![TrajectoryWindow::new(window); enemy_count],
            pending: vec![None; enemy_count],
        }
    }

    pub fn window(&self, enemy: usize) -> &TrajectoryWindow {
        &self.windows[enemy]
    }

    /// Records the enemies sensed in `state`. Enemies out of sensor range
    /// lose their window. Windows that were full on the previous step and
    /// are still tracked yield a supervised sample and, when a forecast
    /// was made, a prediction record.
    pub fn observe(&mut self, env: &Environment, state: &WorldState) -> TrackerUpdate {
        let mut sensed = vec![false; self.windows.len()];
        for (id, _) in env.sensed_enemies(state) {
            sensed[id] = true;
        }
        let mut update = TrackerUpdate::default();
        for id in 0..self.windows.len() {
            let pending = self.pending[id].take();
            if !sensed[id] {
                self.windows[id].clear();
                continue;
            }
            let features = enemy_features(&state.enemies[id]);
            if let Some((history, predicted)) = pending {
                if let Some(predicted) = predicted {
                    update.records.push(PredictionRecord {
                        enemy: id,
                        predicted,
                        actual: Some(PredictedState {
                            position: Vec2::new(features[0], features[1]),
                            velocity: Vec2::new(features[2], features[3]),
                            heading: features[4],
                        }),
                    });
                }
                update.samples.push(IntentSample {
                    history,
                    next: features,
                });
            }
            self.windows[id].push(features);
            if self.windows[id].is_ready() {
                let seq = self.windows[id].sequence().expect("window is ready");
                self.pending[id] = Some((seq, None));
            }
        }
        update
    }

    /// Forecasts for the enemies occupying each observation slot.
    pub fn predict(&mut self, predictor: &IntentPredictor, obs: &Observation) -> Result<Vec<Option<PredictedState>>> {
        let mut ids = Vec::new();
        let mut histories: Vec<Vec<EnemyFeatures>> = Vec::new();
        for id in obs.slot_enemies.iter().flatten() {
            if let Some((h, _)) = &self.pending[*id] {
                ids.push(*id);
                histories.push(h.clone());
            }
        }
        let refs: Vec<&[EnemyFeatures]> = histories.iter().map(Vec::as_slice).collect();
        let preds = predictor.predict_batch(&refs)?;
        for (&id, p) in ids.iter().zip(&preds) {
            if let Some(entry) = &mut self.pending[id] {
                entry.1 = Some(*p);
            }
        }
        Ok(obs
            .slot_enemies
            .iter()
            .map(|slot| {
                slot.and_then(|id| ids.iter().position(|&i| i == id).map(|k| preds[k]))
            })
            .collect())
    }
}

/// Ring store of supervised samples for the predictor.
#[derive(Debug, Clone)]
pub struct IntentSampleBuffer {
    capacity: usize,
    samples: Vec<IntentSample>,
    next: usize,
}

impl IntentSampleBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            samples: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: IntentSample) {
        if self.samples.len() < self.capacity {
            self.samples.push(sample);
        } else {
            self.samples[self.next] = sample;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Vec<&'a IntentSample> {
        (0..n)
            .map(|_| &self.samples[rng.gen_range(0..self.samples.len())])
            .collect()
    }
}
