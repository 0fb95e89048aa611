use rand::Rng;

use super::{AgentId, DqnAgent, Transition};
use crate::error::{Error, Result};

/// Outcome of one control decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub agent: AgentId,
    pub action: usize,
    pub was_random: bool,
}

/// Index of the (agent, action) pair with the largest advantage. Ties go
/// to the earlier agent, then to the lower action.
pub fn select_max_advantage(advantages: &[Vec<f64>]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (k, adv) in advantages.iter().enumerate() {
        for (a, &v) in adv.iter().enumerate() {
            if best.map_or(true, |(_, _, b)| v > b) {
                best = Some((k, a, v));
            }
        }
    }
    best.map(|(k, a, _)| (k, a))
}

/// Experts ordered by id, switched by maximum raw advantage.
#[derive(Debug, Clone)]
pub struct EnsembleController {
    agents: Vec<DqnAgent>,
    activations: [u64; 3],
}

impl EnsembleController {
    pub fn new(mut agents: Vec<DqnAgent>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::validation("ensemble needs at least one agent"));
        }
        agents.sort_by_key(|a| a.id());
        for pair in agents.windows(2) {
            if pair[0].id() == pair[1].id() {
                return Err(Error::validation(format!("duplicate agent {}", pair[0].id().as_str())));
            }
            if pair[0].action_count() != pair[1].action_count() {
                return Err(Error::validation("ensemble agents disagree on the action count"));
            }
        }
        Ok(Self {
            agents,
            activations: [0; 3],
        })
    }

    pub fn agents(&self) -> &[DqnAgent] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [DqnAgent] {
        &mut self.agents
    }

    pub fn agent(&self, id: AgentId) -> Option<&DqnAgent> {
        self.agents.iter().find(|a| a.id() == id)
    }

    pub fn agent_mut(&mut self, id: AgentId) -> Option<&mut DqnAgent> {
        self.agents.iter_mut().find(|a| a.id() == id)
    }

    pub fn action_count(&self) -> usize {
        self.agents[0].action_count()
    }

    /// Decisions per agent since the last reset, indexed by [`AgentId`].
    pub fn activations(&self) -> [u64; 3] {
        self.activations
    }

    pub fn record_activation(&mut self, id: AgentId) {
        self.activations[id.index()] += 1;
    }

    pub fn reset_activations(&mut self) {
        self.activations = [0; 3];
    }

    /// Raw advantage vectors, one per agent, each on its own input.
    pub fn advantages(&self, base: &[f64], augmented: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
        self.agents
            .iter()
            .map(|a| Ok(a.advantages(a.choose_input(base, augmented)?)?.1))
            .collect()
    }

    /// Greedy switching action on every successor state of `batch`.
    pub fn next_actions(&self, batch: &[&Transition]) -> Result<Vec<usize>> {
        let adv = self
            .agents
            .iter()
            .map(|a| a.batch_advantages(batch, true))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..batch.len())
            .map(|r| {
                let rows: Vec<Vec<f64>> = adv.iter().map(|m| m.row(r).to_vec()).collect();
                select_max_advantage(&rows).expect("non-empty ensemble").1
            })
            .collect())
    }

    /// Greedy switching decision.
    pub fn select(&self, base: &[f64], augmented: Option<&[f64]>) -> Result<Decision> {
        let adv = self.advantages(base, augmented)?;
        let (k, action) = select_max_advantage(&adv).expect("non-empty ensemble");
        Ok(Decision {
            agent: self.agents[k].id(),
            action,
            was_random: false,
        })
    }

    /// Epsilon-greedy decision. A random action keeps the agent the greedy
    /// rule chose, so activation counts track control authority.
    pub fn act<R: Rng + ?Sized>(
        &mut self,
        base: &[f64],
        augmented: Option<&[f64]>,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Decision> {
        let mut d = self.select(base, augmented)?;
        if rng.gen::<f64>() < epsilon {
            d.action = rng.gen_range(0..self.action_count());
            d.was_random = true;
        }
        self.activations[d.agent.index()] += 1;
        Ok(d)
    }
}
