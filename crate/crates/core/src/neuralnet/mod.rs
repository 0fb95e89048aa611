//! A small, explicit-backpropagation network toolkit: dense layers, an LSTM
//! cell, a dueling Q head, MSE/Huber losses, Adam, and a binary checkpoint
//! container. Everything is `f64`.

mod adam;
mod checkpoint;
mod dense;
mod dueling;
mod loss;
mod lstm;
mod matrix;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, NamedArray, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::{Activation, Dense, DenseSpec};
pub use dueling::{DuelingForward, DuelingHead, DuelingQNetwork, DuelingSpec, QNetForward, QNetSpec};
pub use loss::{huber_loss, mse_loss};
pub use lstm::{Lstm, LstmSequenceCache, LstmSpec, LstmStepCache};
pub use matrix::Matrix;
pub(crate) use matrix::gemm;

use rand::Rng;

use crate::error::{check_len, Error, Result};

/// A named, shaped array of trainable values and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParameterBlock {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    /// Uniform values in `[-limit, limit]`.
    pub fn uniform<R: Rng + ?Sized>(name: impl Into<String>, shape: Vec<usize>, limit: f64, rng: &mut R) -> Self {
        let mut block = Self::zeros(name, shape);
        for v in &mut block.values {
            *v = rng.gen_range(-limit..=limit);
        }
        block
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Replaces the values, keeping the shape.
    pub fn assign(&mut self, values: &[f64]) -> Result<()> {
        check_len("ParameterBlock::assign", self.values.len(), values.len())?;
        self.values.copy_from_slice(values);
        Ok(())
    }
}

/// Anything that owns parameter blocks.
pub trait Parameterized {
    fn blocks(&self) -> Vec<&ParameterBlock>;
    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock>;

    fn zero_grad(&mut self) {
        for b in self.blocks_mut() {
            b.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Copies all values from a structurally identical model.
    fn copy_values_from(&mut self, other: &dyn Parameterized) -> Result<()> {
        let src = other.blocks();
        let mut dst = self.blocks_mut();
        check_len("Parameterized::copy_values_from blocks", dst.len(), src.len())?;
        for (d, s) in dst.iter_mut().zip(src) {
            if d.shape != s.shape {
                return Err(Error::validation(format!(
                    "parameter block {} has shape {:?}, source {} has {:?}",
                    d.name, d.shape, s.name, s.shape
                )));
            }
            d.values.copy_from_slice(&s.values);
        }
        Ok(())
    }
}

/// Glorot/Xavier uniform bound.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
