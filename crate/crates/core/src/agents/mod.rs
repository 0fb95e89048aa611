//! Dueling Q-learning experts, their replay memory, the advantage-switching
//! ensemble, and the training loop.

mod dqn;
mod ensemble;
pub mod gridworld;
mod train;

pub use dqn::{AgentSpec, DqnAgent, DqnConfig};
pub use ensemble::{select_max_advantage, Decision, EnsembleController};
pub use train::{
    train, Algorithm, LearnedPolicy, PolicyInputs, TrainConfig, TrainOutcome, TrainingLogRow, TRAINING_LOG_HEADER,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{RewardBreakdown, RewardWeights, ScenarioLabel};
use crate::error::{Error, Result};

/// Expert identity. The order is the switching tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    Nav,
    Main,
    Eva,
}

impl AgentId {
    pub const ALL: [AgentId; 3] = [AgentId::Nav, AgentId::Main, AgentId::Eva];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentId::Nav => "nav",
            AgentId::Main => "main",
            AgentId::Eva => "eva",
        }
    }

    pub fn from_index(i: usize) -> Option<AgentId> {
        Self::ALL.get(i).copied()
    }

    /// Reward weighting of each expert.
    pub fn default_weights(self) -> RewardWeights {
        match self {
            AgentId::Nav => RewardWeights::new(1.0, 0.0, 1.0),
            AgentId::Main => RewardWeights::new(1.0, 1.0, 1.0),
            AgentId::Eva => RewardWeights::new(0.2, 3.0, 1.0),
        }
    }
}

/// Which observation an agent consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Base,
    Augmented,
}

/// One replay record. `state` and `next_state` hold the augmented
/// observation when intent prediction is active; the base observation is
/// always the leading `base_len` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: RewardBreakdown,
    pub next_state: Vec<f64>,
    /// True when the episode ended by its dynamics. Timeouts stay false so
    /// their value is bootstrapped.
    pub terminal: bool,
    pub agent: AgentId,
    pub scenario: ScenarioLabel,
    pub base_len: usize,
}

impl Transition {
    pub fn base_state(&self) -> &[f64] {
        &self.state[..self.base_len]
    }

    pub fn base_next_state(&self) -> &[f64] {
        &self.next_state[..self.base_len]
    }
}

/// Fixed-capacity FIFO store with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    min_fill: usize,
    items: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, min_fill: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::validation("replay capacity must be positive"));
        }
        if min_fill > capacity {
            return Err(Error::validation(format!(
                "replay min_fill {min_fill} exceeds capacity {capacity}"
            )));
        }
        Ok(Self {
            capacity,
            min_fill: min_fill.max(1),
            items: Vec::new(),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_ready(&self) -> bool {
        self.items.len() >= self.min_fill
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample(&mut self, n: usize) -> Result<Vec<&Transition>> {
        if !self.is_ready() {
            return Err(Error::Usage(format!(
                "replay holds {} transitions, sampling needs {}",
                self.items.len(),
                self.min_fill
            )));
        }
        let len = self.items.len();
        let idx: Vec<usize> = (0..n).map(|_| self.rng.gen_range(0..len)).collect();
        Ok(idx.into_iter().map(|i| &self.items[i]).collect())
    }
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of
/// the episodes, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.5,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.start)
            && (0.0..=1.0).contains(&self.end)
            && self.end <= self.start
            && (0.0..=1.0).contains(&self.decay_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::validation(
                "train.epsilon: need 0 <= end <= start <= 1 and decay_fraction in [0, 1]",
            ))
        }
    }

    pub fn value(&self, episode: usize, total_episodes: usize) -> f64 {
        let horizon = self.decay_fraction * total_episodes as f64;
        if horizon <= 0.0 {
            return self.end;
        }
        let frac = (episode as f64 / horizon).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(i: usize) -> Transition {
        Transition {
            state: vec![i as f64, 0.5],
            action: i % 3,
            reward: RewardBreakdown {
                r_nav: i as f64,
                ..RewardBreakdown::default()
            },
            next_state: vec![i as f64 + 1.0, 0.25],
            terminal: i % 2 == 0,
            agent: AgentId::Main,
            scenario: ScenarioLabel::SafeCruise,
            base_len: 1,
        }
    }

    #[test]
    fn replay_is_fifo_and_bounded() {
        let mut buf = ReplayBuffer::new(3, 2, 0).unwrap();
        assert!(buf.sample(1).is_err());
        for i in 0..5 {
            buf.push(tr(i));
            assert!(buf.len() <= 3);
        }
        let kept: Vec<f64> = buf.iter_oldest_first().map(|t| t.state[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
        let stored: Vec<Transition> = buf.iter_oldest_first().cloned().collect();
        for t in buf.sample(50).unwrap() {
            assert!(stored.contains(t));
        }
        assert!(ReplayBuffer::new(2, 3, 0).is_err());
    }

    #[test]
    fn base_prefix() {
        let t = tr(4);
        assert_eq!(t.base_state(), &[4.0]);
        assert_eq!(t.base_next_state(), &[5.0]);
    }

    #[test]
    fn epsilon_schedule() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.value(0, 1000), 1.0);
        assert!((s.value(250, 1000) - 0.525).abs() < 1e-12);
        assert!((s.value(500, 1000) - 0.05).abs() < 1e-12);
        assert!((s.value(900, 1000) - 0.05).abs() < 1e-12);
        let mut prev = 1.0;
        for e in 0..1000 {
            let v = s.value(e, 1000);
            assert!(v <= prev && v >= 0.05);
            prev = v;
        }
    }

    #[test]
    fn weights_and_order() {
        assert!(AgentId::Nav < AgentId::Main && AgentId::Main < AgentId::Eva);
        assert_eq!(AgentId::Nav.default_weights(), RewardWeights::new(1.0, 0.0, 1.0));
        assert_eq!(AgentId::from_index(2), Some(AgentId::Eva));
        assert_eq!(AgentId::from_index(3), None);
    }
}
