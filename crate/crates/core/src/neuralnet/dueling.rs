use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, Dense, DenseSpec, Matrix, ParameterBlock, Parameterized};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuelingSpec {
    pub feature_dim: usize,
    pub action_count: usize,
}

/// Separate value and advantage streams recombined as
/// `Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a')`.
#[derive(Debug, Clone, PartialEq)]
pub struct DuelingHead {
    spec: DuelingSpec,
    pub value: Dense,
    pub advantage: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuelingForward {
    /// `B x 1`
    pub value: Matrix,
    /// Raw advantage stream, `B x |A|`.
    pub advantage: Matrix,
    /// `B x |A|`
    pub q: Matrix,
}

impl DuelingHead {
    pub fn zeros(spec: DuelingSpec, name: &str) -> Result<Self> {
        Ok(Self {
            spec,
            value: Dense::zeros(Self::value_spec(spec), &format!("{name}.value"))?,
            advantage: Dense::zeros(Self::advantage_spec(spec), &format!("{name}.advantage"))?,
        })
    }

    pub fn new<R: Rng + ?Sized>(spec: DuelingSpec, name: &str, rng: &mut R) -> Result<Self> {
        Ok(Self {
            spec,
            value: Dense::new(Self::value_spec(spec), &format!("{name}.value"), rng)?,
            advantage: Dense::new(Self::advantage_spec(spec), &format!("{name}.advantage"), rng)?,
        })
    }

    fn value_spec(spec: DuelingSpec) -> DenseSpec {
        DenseSpec {
            in_dim: spec.feature_dim,
            out_dim: 1,
            activation: Activation::Identity,
        }
    }

    fn advantage_spec(spec: DuelingSpec) -> DenseSpec {
        DenseSpec {
            in_dim: spec.feature_dim,
            out_dim: spec.action_count,
            activation: Activation::Identity,
        }
    }

    pub fn spec(&self) -> DuelingSpec {
        self.spec
    }

    pub fn forward(&self, features: &Matrix) -> Result<DuelingForward> {
        let value = self.value.forward(features)?;
        let advantage = self.advantage.forward(features)?;
        Ok(DuelingForward {
            q: combine(&value, &advantage),
            value,
            advantage,
        })
    }

    /// Accumulates gradients from `dL/dQ` and returns `dL/d features`.
    pub fn backward(&mut self, features: &Matrix, fwd: &DuelingForward, grad_q: &Matrix) -> Result<Matrix> {
        self.backward_with_advantage(features, fwd, grad_q, None)
    }

    /// As [`Self::backward`], plus an optional loss gradient taken
    /// directly with respect to the raw advantage stream.
    pub fn backward_with_advantage(
        &mut self,
        features: &Matrix,
        fwd: &DuelingForward,
        grad_q: &Matrix,
        grad_advantage: Option<&Matrix>,
    ) -> Result<Matrix> {
        check_len("DuelingHead::backward grad cols", self.spec.action_count, grad_q.cols())?;
        if let Some(g) = grad_advantage {
            check_len("DuelingHead::backward advantage grad rows", grad_q.rows(), g.rows())?;
            check_len("DuelingHead::backward advantage grad cols", self.spec.action_count, g.cols())?;
        }
        let b = grad_q.rows();
        let n = self.spec.action_count as f64;
        let mut dv = Matrix::zeros(b, 1);
        let mut da = grad_q.clone();
        for r in 0..b {
            let sum: f64 = grad_q.row(r).iter().sum();
            dv.set(r, 0, sum);
            let mean = sum / n;
            da.row_mut(r).iter_mut().for_each(|g| *g -= mean);
        }
        if let Some(g) = grad_advantage {
            for (d, e) in da.data_mut().iter_mut().zip(g.data()) {
                *d += e;
            }
        }
        let mut df = self
            .value
            .backward(features, &fwd.value, &dv, true)?
            .expect("input grad requested");
        let dfa = self
            .advantage
            .backward(features, &fwd.advantage, &da, true)?
            .expect("input grad requested");
        for (a, b) in df.data_mut().iter_mut().zip(dfa.data()) {
            *a += b;
        }
        Ok(df)
    }
}

fn combine(value: &Matrix, advantage: &Matrix) -> Matrix {
    let mut q = advantage.clone();
    let n = advantage.cols() as f64;
    for r in 0..q.rows() {
        let mean = advantage.row(r).iter().sum::<f64>() / n;
        let v = value.get(r, 0);
        q.row_mut(r).iter_mut().for_each(|a| *a = v + (*a - mean));
    }
    q
}

impl Parameterized for DuelingHead {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        let mut out = self.value.blocks();
        out.extend(self.advantage.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        let mut out = self.value.blocks_mut();
        out.extend(self.advantage.blocks_mut());
        out
    }
}

/// Shape of a dueling Q-network: ReLU trunk widths, then the dueling head.
/// An empty `hidden` list puts the head directly on the input (a linear
/// Q-function).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub action_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuelingQNetwork {
    spec: QNetSpec,
    pub trunk: Vec<Dense>,
    pub head: DuelingHead,
}

/// Forward intermediates: `activations[0]` is the input, the last entry is
/// the feature matrix fed to the head.
#[derive(Debug, Clone)]
pub struct QNetForward {
    pub activations: Vec<Matrix>,
    pub head: DuelingForward,
}

impl DuelingQNetwork {
    pub fn new<R: Rng + ?Sized>(spec: QNetSpec, rng: &mut R) -> Result<Self> {
        if spec.input_dim == 0 || spec.action_count == 0 {
            return Err(Error::validation("q-network needs positive input and action dimensions"));
        }
        let mut trunk = Vec::with_capacity(spec.hidden.len());
        let mut width = spec.input_dim;
        for (i, &h) in spec.hidden.iter().enumerate() {
            let layer_spec = DenseSpec {
                in_dim: width,
                out_dim: h,
                activation: Activation::Relu,
            };
            trunk.push(Dense::new(layer_spec, &format!("trunk{i}"), rng)?);
            width = h;
        }
        let head = DuelingHead::new(
            DuelingSpec {
                feature_dim: width,
                action_count: spec.action_count,
            },
            "head",
            rng,
        )?;
        Ok(Self { spec, trunk, head })
    }

    pub fn spec(&self) -> &QNetSpec {
        &self.spec
    }

    pub fn forward(&self, input: &Matrix) -> Result<QNetForward> {
        check_len("DuelingQNetwork::forward input width", self.spec.input_dim, input.cols())?;
        let mut activations = Vec::with_capacity(self.trunk.len() + 1);
        activations.push(input.clone());
        for layer in &self.trunk {
            let next = layer.forward(activations.last().expect("non-empty"))?;
            activations.push(next);
        }
        let head = self.head.forward(activations.last().expect("non-empty"))?;
        Ok(QNetForward { activations, head })
    }

    /// Accumulates gradients for `dL/dQ`.
    pub fn backward(&mut self, fwd: &QNetForward, grad_q: &Matrix) -> Result<()> {
        self.backward_with_advantage(fwd, grad_q, None)
    }

    /// Accumulates gradients for `dL/dQ` plus an optional `dL/dA` on the
    /// raw advantage stream.
    pub fn backward_with_advantage(
        &mut self,
        fwd: &QNetForward,
        grad_q: &Matrix,
        grad_advantage: Option<&Matrix>,
    ) -> Result<()> {
        let features = fwd.activations.last().expect("non-empty");
        let mut grad = self.head.backward_with_advantage(features, &fwd.head, grad_q, grad_advantage)?;
        for (i, layer) in self.trunk.iter_mut().enumerate().rev() {
            let want = i > 0;
            match layer.backward(&fwd.activations[i], &fwd.activations[i + 1], &grad, want)? {
                Some(g) => grad = g,
                None => break,
            }
        }
        Ok(())
    }
}

impl Parameterized for DuelingQNetwork {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        let mut out: Vec<&ParameterBlock> = self.trunk.iter().flat_map(|l| l.blocks()).collect();
        out.extend(self.head.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        let mut out: Vec<&mut ParameterBlock> = self.trunk.iter_mut().flat_map(|l| l.blocks_mut()).collect();
        out.extend(self.head.blocks_mut());
        out
    }
}
