use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gemm, glorot_limit, Matrix, ParameterBlock, Parameterized};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activated output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Fully connected layer `y = act(x W + b)`, with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    spec: DenseSpec,
    pub weight: ParameterBlock,
    pub bias: ParameterBlock,
}

impl Dense {
    pub fn zeros(spec: DenseSpec, name: &str) -> Result<Self> {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::validation(format!("dense layer {name} needs positive dimensions")));
        }
        Ok(Self {
            spec,
            weight: ParameterBlock::zeros(format!("{name}.weight"), vec![spec.in_dim, spec.out_dim]),
            bias: ParameterBlock::zeros(format!("{name}.bias"), vec![spec.out_dim]),
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(spec: DenseSpec, name: &str, rng: &mut R) -> Result<Self> {
        let mut layer = Self::zeros(spec, name)?;
        let limit = glorot_limit(spec.in_dim, spec.out_dim);
        for w in &mut layer.weight.values {
            *w = rng.gen_range(-limit..=limit);
        }
        Ok(layer)
    }

    pub fn spec(&self) -> DenseSpec {
        self.spec
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        check_len("Dense::forward input width", self.spec.in_dim, input.cols())?;
        let b = input.rows();
        let n = self.spec.out_dim;
        let mut out = Matrix::zeros(b, n);
        for r in 0..b {
            out.row_mut(r).copy_from_slice(&self.bias.values);
        }
        gemm(b, self.spec.in_dim, n, input.data(), false, &self.weight.values, false, 1.0, out.data_mut());
        let act = self.spec.activation;
        if act != Activation::Identity {
            out.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        }
        Ok(out)
    }

    /// Accumulates parameter gradients given the forward `input`, its
    /// activated `output` and `grad_output = dL/d output`. Returns
    /// `dL/d input` when requested.
    pub fn backward(
        &mut self,
        input: &Matrix,
        output: &Matrix,
        grad_output: &Matrix,
        want_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        check_len("Dense::backward grad rows", output.rows(), grad_output.rows())?;
        check_len("Dense::backward grad cols", self.spec.out_dim, grad_output.cols())?;
        check_len("Dense::backward input rows", output.rows(), input.rows())?;
        let b = input.rows();
        let (k, n) = (self.spec.in_dim, self.spec.out_dim);
        let act = self.spec.activation;
        let dz = if act == Activation::Identity {
            grad_output.clone()
        } else {
            let mut dz = grad_output.clone();
            for (g, &y) in dz.data_mut().iter_mut().zip(output.data()) {
                *g *= act.derivative_from_output(y);
            }
            dz
        };
        gemm(k, b, n, input.data(), true, dz.data(), false, 1.0, &mut self.weight.grad);
        for r in 0..b {
            for (g, &d) in self.bias.grad.iter_mut().zip(dz.row(r)) {
                *g += d;
            }
        }
        if !want_input_grad {
            return Ok(None);
        }
        let mut dx = Matrix::zeros(b, k);
        gemm(b, n, k, dz.data(), false, &self.weight.values, true, 0.0, dx.data_mut());
        Ok(Some(dx))
    }
}

impl Parameterized for Dense {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        vec![&self.weight, &self.bias]
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(i: usize, o: usize, a: Activation) -> DenseSpec {
        DenseSpec {
            in_dim: i,
            out_dim: o,
            activation: a,
        }
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let mut layer = Dense::zeros(spec(3, 3, Activation::Identity), "d").unwrap();
        for i in 0..3 {
            layer.weight.values[i * 3 + i] = 1.0;
        }
        let x = Matrix::row_vector(&[0.5, -2.0, 3.0]);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_output_activated_bias() {
        let mut layer = Dense::zeros(spec(2, 2, Activation::Tanh), "d").unwrap();
        layer.bias.values = vec![0.3, -1.0];
        let y = layer.forward(&Matrix::row_vector(&[4.0, 5.0])).unwrap();
        assert_eq!(y.row(0), &[0.3f64.tanh(), (-1.0f64).tanh()]);
    }

    #[test]
    fn wrong_input_width_is_an_error() {
        let layer = Dense::zeros(spec(2, 2, Activation::Relu), "d").unwrap();
        assert!(layer.forward(&Matrix::row_vector(&[1.0])).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::Identity, Activation::Relu] {
            let mut layer = Dense::new(spec(4, 3, act), "d", &mut rng).unwrap();
            layer.bias.values.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
            let x = Matrix::from_vec(2, 4, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let proj: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |l: &Dense, x: &Matrix| -> f64 {
                l.forward(x).unwrap().data().iter().zip(&proj).map(|(a, b)| a * b).sum()
            };
            let y = layer.forward(&x).unwrap();
            let g = Matrix::from_vec(2, 3, proj.clone()).unwrap();
            let dx = layer.backward(&x, &y, &g, true).unwrap().unwrap();
            let h = 1e-5;
            for i in 0..layer.weight.values.len() {
                let mut p = layer.clone();
                p.weight.values[i] += h;
                let mut m = layer.clone();
                m.weight.values[i] -= h;
                let num = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                let ana = layer.weight.grad[i];
                assert!((num - ana).abs() <= 1e-5 * num.abs().max(ana.abs()).max(1e-3), "{act:?} w{i}: {num} vs {ana}");
            }
            for i in 0..8 {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let num = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
                assert!((num - dx.data()[i]).abs() <= 1e-5 * num.abs().max(1e-3));
            }
        }
    }
}
