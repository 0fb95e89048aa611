use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AgentId, InputMode, Transition};
use crate::environment::RewardWeights;
use crate::error::{Error, Result};
use crate::neuralnet::{huber_loss, Adam, AdamConfig, Checkpoint, DuelingQNetwork, Matrix, Parameterized, QNetSpec};

/// Learning hyperparameters shared by every expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// Gradient steps between hard target-network copies.
    pub target_sync_interval: u64,
    pub huber_delta: f64,
    /// Weight of an optional `mean_a A(s, a)^2` penalty that pins the
    /// otherwise unconstrained offset of the raw advantage stream. Zero
    /// (the default) disables it.
    #[serde(default)]
    pub advantage_anchor: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            learning_rate: 1e-5,
            gamma: 0.99,
            batch_size: 512,
            target_sync_interval: 1000,
            huber_delta: 1.0,
            advantage_anchor: 0.0,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::Validation(format!("train.dqn.{f}: {m}")));
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden", "layer widths must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.target_sync_interval == 0 {
            return bad("target_sync_interval", "must be at least 1");
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber_delta", "must be positive");
        }
        if !(self.advantage_anchor.is_finite() && self.advantage_anchor >= 0.0) {
            return bad("advantage_anchor", "must be finite and non-negative");
        }
        Ok(())
    }
}

/// Everything needed to rebuild an agent besides its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: AgentId,
    pub weights: RewardWeights,
    pub input_mode: InputMode,
    pub network: QNetSpec,
    pub learning_rate: f64,
    pub gamma: f64,
    pub target_sync_interval: u64,
    pub huber_delta: f64,
    #[serde(default)]
    pub advantage_anchor: f64,
}

impl AgentSpec {
    pub fn new(id: AgentId, input_mode: InputMode, input_dim: usize, action_count: usize, cfg: &DqnConfig) -> Self {
        Self {
            id,
            weights: id.default_weights(),
            input_mode,
            network: QNetSpec {
                input_dim,
                hidden: cfg.hidden.clone(),
                action_count,
            },
            learning_rate: cfg.learning_rate,
            gamma: cfg.gamma,
            target_sync_interval: cfg.target_sync_interval,
            huber_delta: cfg.huber_delta,
            advantage_anchor: cfg.advantage_anchor,
        }
    }
}

/// Dueling Q-learner with a hard-synced target network.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    spec: AgentSpec,
    online: DuelingQNetwork,
    target: DuelingQNetwork,
    adam: Adam,
    grad_steps: u64,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(spec: AgentSpec, rng: &mut R) -> Result<Self> {
        let online = DuelingQNetwork::new(spec.network.clone(), rng)?;
        let target = online.clone();
        let adam = Adam::new(AdamConfig::with_learning_rate(spec.learning_rate), &online.blocks());
        Ok(Self {
            spec,
            online,
            target,
            adam,
            grad_steps: 0,
        })
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn id(&self) -> AgentId {
        self.spec.id
    }

    pub fn input_mode(&self) -> InputMode {
        self.spec.input_mode
    }

    pub fn input_dim(&self) -> usize {
        self.spec.network.input_dim
    }

    pub fn action_count(&self) -> usize {
        self.spec.network.action_count
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn online(&self) -> &DuelingQNetwork {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut DuelingQNetwork {
        &mut self.online
    }

    pub fn target(&self) -> &DuelingQNetwork {
        &self.target
    }

    /// Picks this agent's observation variant.
    pub fn choose_input<'a>(&self, base: &'a [f64], augmented: Option<&'a [f64]>) -> Result<&'a [f64]> {
        let obs = match self.spec.input_mode {
            InputMode::Base => base,
            InputMode::Augmented => augmented.ok_or_else(|| {
                Error::Usage(format!("agent {} needs the augmented observation", self.id().as_str()))
            })?,
        };
        self.check_input(obs)?;
        Ok(obs)
    }

    fn check_input(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "agent observation",
                expected: self.input_dim(),
                actual: obs.len(),
            });
        }
        Ok(())
    }

    /// State value and the raw advantage stream, before mean subtraction.
    pub fn advantages(&self, obs: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(obs)?;
        let fwd = self.online.forward(&Matrix::row_vector(obs))?;
        Ok((fwd.head.value.get(0, 0), fwd.head.advantage.row(0).to_vec()))
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_input(obs)?;
        Ok(self.online.forward(&Matrix::row_vector(obs))?.head.q.into_vec())
    }

    pub fn target_q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_input(obs)?;
        Ok(self.target.forward(&Matrix::row_vector(obs))?.head.q.into_vec())
    }

    /// Greedy action; ties go to the lowest index.
    pub fn greedy_action(&self, obs: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }

    pub fn reward_of(&self, t: &Transition) -> f64 {
        t.reward.weighted(self.spec.weights)
    }

    fn input_of<'a>(&self, t: &'a Transition, next: bool) -> &'a [f64] {
        let full = if next { &t.next_state } else { &t.state };
        match self.spec.input_mode {
            InputMode::Base => &full[..t.base_len],
            InputMode::Augmented => full,
        }
    }

    fn batch_matrix(&self, batch: &[&Transition], next: bool) -> Result<Matrix> {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(batch.len() * d);
        for t in batch {
            let x = self.input_of(t, next);
            self.check_input(x)?;
            data.extend_from_slice(x);
        }
        Matrix::from_vec(batch.len(), d, data)
    }

    /// Raw advantage rows of the online network on the batch states
    /// (`next` selects the successor states).
    pub fn batch_advantages(&self, batch: &[&Transition], next: bool) -> Result<Matrix> {
        let x = self.batch_matrix(batch, next)?;
        Ok(self.online.forward(&x)?.head.advantage)
    }

    /// Bootstrapped targets `r + gamma * max_a' Q_target(s', a')`, or `r`
    /// for terminal transitions.
    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        self.td_targets_with(batch, None)
    }

    /// As [`Self::td_targets`], but bootstrapping from `Q_target(s', a')`
    /// at the given successor actions when `next_actions` is set.
    pub fn td_targets_with(&self, batch: &[&Transition], next_actions: Option<&[usize]>) -> Result<Vec<f64>> {
        if let Some(na) = next_actions {
            if na.len() != batch.len() || na.iter().any(|&a| a >= self.action_count()) {
                return Err(Error::Usage("next actions do not fit the batch".into()));
            }
        }
        let next = self.batch_matrix(batch, true)?;
        let q_next = self.target.forward(&next)?.head.q;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(r, t)| {
                let reward = self.reward_of(t);
                if t.terminal {
                    reward
                } else {
                    let boot = match next_actions {
                        Some(na) => q_next.get(r, na[r]),
                        None => q_next.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    };
                    reward + self.spec.gamma * boot
                }
            })
            .collect())
    }

    /// One optimizer step on the Huber TD loss. Returns the loss before the
    /// step.
    pub fn td_update(&mut self, batch: &[&Transition]) -> Result<f64> {
        self.td_update_with(batch, None)
    }

    /// [`Self::td_update`] with the successor actions of
    /// [`Self::td_targets_with`].
    pub fn td_update_with(&mut self, batch: &[&Transition], next_actions: Option<&[usize]>) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Usage("td_update needs a non-empty batch".into()));
        }
        let actions = self.action_count();
        for t in batch {
            if t.action >= actions {
                return Err(Error::Usage(format!("transition action {} out of range", t.action)));
            }
        }
        let targets = self.td_targets_with(batch, next_actions)?;
        let states = self.batch_matrix(batch, false)?;
        let fwd = self.online.forward(&states)?;
        let pred: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(r, t)| fwd.head.q.get(r, t.action))
            .collect();
        let (loss, grad) = huber_loss(&pred, &targets, self.spec.huber_delta)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "agent {} TD loss is {loss} at gradient step {}",
                self.id().as_str(),
                self.grad_steps
            )));
        }
        let mut grad_q = Matrix::zeros(batch.len(), actions);
        for (r, t) in batch.iter().enumerate() {
            grad_q.set(r, t.action, grad[r]);
        }
        let grad_adv = (self.spec.advantage_anchor > 0.0).then(|| {
            let adv = &fwd.head.advantage;
            let scale = 2.0 * self.spec.advantage_anchor / (actions as f64 * actions as f64 * batch.len() as f64);
            let mut g = Matrix::zeros(batch.len(), actions);
            for r in 0..batch.len() {
                let sum: f64 = adv.row(r).iter().sum();
                g.row_mut(r).iter_mut().for_each(|x| *x = scale * sum);
            }
            g
        });
        self.online.zero_grad();
        self.online.backward_with_advantage(&fwd, &grad_q, grad_adv.as_ref())?;
        self.adam.update(&mut self.online.blocks_mut())?;
        self.grad_steps += 1;
        if self.grad_steps % self.spec.target_sync_interval == 0 {
            self.sync_target();
        }
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target
            .copy_values_from(&self.online)
            .expect("online and target share one spec");
    }

    pub fn to_checkpoint(&self, mut metadata: serde_json::Value) -> Result<Checkpoint> {
        if let serde_json::Value::Object(map) = &mut metadata {
            map.insert("agent".into(), serde_json::to_value(&self.spec)?);
            map.insert("grad_steps".into(), self.grad_steps.into());
        }
        let mut ck = Checkpoint::new(metadata);
        ck.push_model("online.", &self.online)?;
        ck.push_model("target.", &self.target)?;
        Ok(ck)
    }

    /// Rebuilds an agent from a checkpoint written by [`Self::to_checkpoint`].
    /// Optimizer moments are not stored and restart from zero.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec_value = ck
            .metadata
            .get("agent")
            .ok_or_else(|| Error::Format("agent checkpoint lacks its spec".into()))?;
        let spec: AgentSpec = serde_json::from_value(spec_value.clone())?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut agent = Self::new(spec, &mut rng)?;
        ck.load_model("online.", &mut agent.online)?;
        ck.load_model("target.", &mut agent.target)?;
        agent.grad_steps = ck.metadata.get("grad_steps").and_then(|v| v.as_u64()).unwrap_or(0);
        Ok(agent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{RewardBreakdown, ScenarioLabel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(gamma: f64) -> DqnAgent {
        agent_with(gamma, 0.0)
    }

    fn agent_with(gamma: f64, anchor: f64) -> DqnAgent {
        let cfg = DqnConfig {
            hidden: vec![6],
            learning_rate: 1e-2,
            gamma,
            batch_size: 4,
            target_sync_interval: 1000,
            huber_delta: 1.0,
            advantage_anchor: anchor,
        };
        let spec = AgentSpec::new(AgentId::Main, InputMode::Base, 3, 4, &cfg);
        DqnAgent::new(spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    fn tr(reward: f64, terminal: bool) -> Transition {
        Transition {
            state: vec![0.1, -0.2, 0.3],
            action: 1,
            reward: RewardBreakdown {
                r_nav: reward,
                ..RewardBreakdown::default()
            },
            next_state: vec![0.4, 0.0, -0.1],
            terminal,
            agent: AgentId::Main,
            scenario: ScenarioLabel::SafeCruise,
            base_len: 3,
        }
    }

    #[test]
    fn terminal_and_zero_discount_targets() {
        let a = agent(0.99);
        let t = tr(1.5, true);
        assert_eq!(a.td_targets(&[&t]).unwrap(), vec![1.5]);
        let a0 = agent(0.0);
        let t = tr(-2.0, false);
        assert_eq!(a0.td_targets(&[&t]).unwrap(), vec![-2.0]);
    }

    #[test]
    fn bootstrapped_target() {
        let mut a = agent(0.99);
        // Force the target network to output 2 for every action.
        for b in a.target.blocks_mut() {
            b.values.iter_mut().for_each(|v| *v = 0.0);
        }
        a.target.head.value.bias.values[0] = 2.0;
        let t = tr(1.0, false);
        let y = a.td_targets(&[&t]).unwrap()[0];
        assert!((y - 2.98).abs() < 1e-12);
    }

    #[test]
    fn successor_actions_pick_the_bootstrap_entry() {
        let a = agent(0.5);
        let t = tr(1.0, false);
        let q = a.target_q_values(&t.next_state).unwrap();
        for k in 0..q.len() {
            let y = a.td_targets_with(&[&t], Some(&[k])).unwrap()[0];
            assert!((y - (1.0 + 0.5 * q[k])).abs() < 1e-12);
        }
        let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((a.td_targets(&[&t]).unwrap()[0] - (1.0 + 0.5 * best)).abs() < 1e-12);
        let term = tr(2.0, true);
        assert_eq!(a.td_targets_with(&[&term], Some(&[0])).unwrap(), vec![2.0]);
        assert!(a.td_targets_with(&[&t], Some(&[q.len()])).is_err());
        assert!(a.td_targets_with(&[&t], Some(&[0, 0])).is_err());
    }

    #[test]
    fn sync_copies_online_and_is_idempotent() {
        let mut a = agent(0.9);
        let batch = [tr(1.0, false), tr(0.0, true)];
        let refs: Vec<&Transition> = batch.iter().collect();
        for _ in 0..5 {
            a.td_update(&refs).unwrap();
        }
        let s = [0.3, 0.3, -0.7];
        assert_ne!(a.q_values(&s).unwrap(), a.target_q_values(&s).unwrap());
        a.sync_target();
        assert_eq!(a.q_values(&s).unwrap(), a.target_q_values(&s).unwrap());
        a.sync_target();
        assert_eq!(a.q_values(&s).unwrap(), a.target_q_values(&s).unwrap());
    }

    #[test]
    fn updates_reduce_td_error_on_a_fixed_batch() {
        let mut a = agent(0.0);
        let t = tr(3.0, true);
        let first = a.td_update(&[&t]).unwrap();
        let mut last = first;
        for _ in 0..300 {
            last = a.td_update(&[&t]).unwrap();
        }
        assert!(last < first * 0.01);
    }

    #[test]
    fn anchor_pins_mean_advantage_without_changing_the_fit() {
        let mut a = agent_with(0.0, 1.0);
        for b in a.online.head.advantage.bias.values.iter_mut() {
            *b = 5.0;
        }
        let t = tr(3.0, true);
        for _ in 0..2000 {
            a.td_update(&[&t]).unwrap();
        }
        let (_, adv) = a.advantages(&t.state).unwrap();
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        assert!(mean.abs() < 0.05, "mean raw advantage {mean}");
        assert!((a.q_values(&t.state).unwrap()[1] - 3.0).abs() < 0.05);
    }

    #[test]
    fn advantage_shape_and_errors() {
        let a = agent(0.9);
        let (_, adv) = a.advantages(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(adv.len(), 4);
        assert_eq!(a.advantages(&[0.0, 1.0]).unwrap_err().is_validation(), true);
        assert!(a.choose_input(&[0.0; 3], None).is_ok());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut a = agent(0.9);
        let t = tr(1.0, false);
        a.td_update(&[&t]).unwrap();
        let ck = a.to_checkpoint(serde_json::json!({"component": "main"})).unwrap();
        let bytes = ck.to_bytes().unwrap();
        let back = DqnAgent::from_checkpoint(&Checkpoint::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
        let s = [0.5, -0.5, 0.25];
        assert_eq!(a.q_values(&s).unwrap(), back.q_values(&s).unwrap());
        assert_eq!(a.target_q_values(&s).unwrap(), back.target_q_values(&s).unwrap());
        assert_eq!(back.spec(), a.spec());
        assert_eq!(back.grad_steps(), 1);
    }
}
