use serde::{Deserialize, Serialize};

use super::ParameterBlock;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam with one moment pair per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, blocks: &[&ParameterBlock]) -> Self {
        Self {
            config,
            step: 0,
            first_moment: blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
            second_moment: blocks.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Applies one step from the accumulated gradients, then clears them.
    /// Refuses (leaving parameters untouched) if any gradient is non-finite.
    pub fn update(&mut self, blocks: &mut [&mut ParameterBlock]) -> Result<()> {
        check_len("Adam::update block count", self.first_moment.len(), blocks.len())?;
        for b in blocks.iter() {
            if b.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {} is not finite", b.name)));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((block, m), v) in blocks.iter_mut().zip(&mut self.first_moment).zip(&mut self.second_moment) {
            check_len("Adam::update block size", m.len(), block.len())?;
            for i in 0..block.values.len() {
                let g = block.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                block.values[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                block.grad[i] = 0.0;
            }
        }
        Ok(())
    }
}
