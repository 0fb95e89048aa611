//! A small deterministic gridworld for checking the Q-learning machinery
//! against exact dynamic programming.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgentId, AgentSpec, DqnAgent, DqnConfig, InputMode, ReplayBuffer, Transition};
use crate::environment::{RewardBreakdown, ScenarioLabel};
use crate::error::{Error, Result};
use crate::seeds;

/// Up, down, left, right.
pub const GRID_ACTIONS: usize = 4;

/// Square grid. Entering a cell costs its entry in `costs`; bumping a
/// wall leaves the agent in place and costs the current cell. Reaching
/// `goal` ends the episode and pays `goal_reward`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub size: usize,
    pub costs: Vec<f64>,
    pub goal: usize,
    pub goal_reward: f64,
}

impl GridWorld {
    /// 5 x 5 grid with the goal in the far corner and uneven step costs.
    pub fn standard() -> Self {
        let size = 5;
        let costs = (0..size * size)
            .map(|i| {
                let (r, c) = (i / size, i % size);
                1.0 + 0.37 * ((r * 7 + c * 3) % 5) as f64
            })
            .collect();
        Self {
            size,
            costs,
            goal: size * size - 1,
            goal_reward: 10.0,
        }
    }

    pub fn state_count(&self) -> usize {
        self.size * self.size
    }

    pub fn next_state(&self, s: usize, a: usize) -> usize {
        let (r, c) = (s / self.size, s % self.size);
        let (r2, c2) = match a {
            0 if r > 0 => (r - 1, c),
            1 if r + 1 < self.size => (r + 1, c),
            2 if c > 0 => (r, c - 1),
            3 if c + 1 < self.size => (r, c + 1),
            _ => (r, c),
        };
        r2 * self.size + c2
    }

    /// `(next state, reward, reached goal)`.
    pub fn step(&self, s: usize, a: usize) -> (usize, f64, bool) {
        let s2 = self.next_state(s, a);
        let done = s2 == self.goal;
        let reward = -self.costs[s2] + if done { self.goal_reward } else { 0.0 };
        (s2, reward, done)
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.state_count()];
        v[s] = 1.0;
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTrainConfig {
    pub gradient_steps: u64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub min_fill: usize,
    pub target_sync_interval: u64,
    pub max_episode_steps: usize,
}

impl Default for GridTrainConfig {
    fn default() -> Self {
        Self {
            gradient_steps: 20_000,
            gamma: 0.9,
            learning_rate: 1e-2,
            batch_size: 32,
            buffer_capacity: 5000,
            min_fill: 500,
            target_sync_interval: 200,
            max_episode_steps: 30,
        }
    }
}

/// Trains a linear dueling Q-function on one-hot states from uniformly
/// random behaviour with random starts.
pub fn train_gridworld(grid: &GridWorld, cfg: &GridTrainConfig, seed: u64) -> Result<DqnAgent> {
    if grid.goal >= grid.state_count() {
        return Err(Error::validation("gridworld goal lies outside the grid"));
    }
    let dqn = DqnConfig {
        hidden: Vec::new(),
        learning_rate: cfg.learning_rate,
        gamma: cfg.gamma,
        batch_size: cfg.batch_size,
        target_sync_interval: cfg.target_sync_interval,
        huber_delta: 1.0,
        advantage_anchor: 0.0,
    };
    dqn.validate()?;
    let spec = AgentSpec::new(AgentId::Main, InputMode::Base, grid.state_count(), GRID_ACTIONS, &dqn);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, 0, 0));
    let mut agent = DqnAgent::new(spec, &mut rng)?;
    let mut replay = ReplayBuffer::new(cfg.buffer_capacity, cfg.min_fill, seeds::derive(seed, 1, 0))?;
    let n = grid.state_count();
    'outer: loop {
        let mut s = loop {
            let s = rng.gen_range(0..n);
            if s != grid.goal {
                break s;
            }
        };
        for _ in 0..cfg.max_episode_steps {
            let a = rng.gen_range(0..GRID_ACTIONS);
            let (s2, r, done) = grid.step(s, a);
            replay.push(Transition {
                state: grid.one_hot(s),
                action: a,
                reward: RewardBreakdown {
                    r_nav: r,
                    ..RewardBreakdown::default()
                },
                next_state: grid.one_hot(s2),
                terminal: done,
                agent: AgentId::Main,
                scenario: ScenarioLabel::SafeCruise,
                base_len: n,
            });
            if replay.is_ready() {
                let batch = replay.sample(cfg.batch_size)?;
                agent.td_update(&batch)?;
                if agent.grad_steps() >= cfg.gradient_steps {
                    break 'outer;
                }
            }
            if done {
                break;
            }
            s = s2;
        }
    }
    Ok(agent)
}

/// Greedy action of `agent` in every non-goal state, `None` at the goal.
pub fn greedy_policy(agent: &DqnAgent, grid: &GridWorld) -> Result<Vec<Option<usize>>> {
    (0..grid.state_count())
        .map(|s| {
            if s == grid.goal {
                Ok(None)
            } else {
                agent.greedy_action(&grid.one_hot(s)).map(Some)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moves_and_walls() {
        let g = GridWorld::standard();
        assert_eq!(g.next_state(0, 0), 0);
        assert_eq!(g.next_state(0, 1), 5);
        assert_eq!(g.next_state(0, 3), 1);
        assert_eq!(g.next_state(4, 3), 4);
        let (s, r, done) = g.step(23, 3);
        assert_eq!(s, 24);
        assert!(done);
        assert!((r - (g.goal_reward - g.costs[24])).abs() < 1e-12);
    }
}
