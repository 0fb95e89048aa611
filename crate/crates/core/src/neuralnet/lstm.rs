use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::sigmoid;
use super::{gemm, glorot_limit, Matrix, ParameterBlock, Parameterized};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
}

/// Gated recurrent cell. The fused weight is stored `(input + hidden) x
/// 4*hidden` with gate blocks ordered input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    spec: LstmSpec,
    pub weight: ParameterBlock,
    pub bias: ParameterBlock,
}

/// Intermediates of one cell step, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    xh: Matrix,
    /// Activated gates `[i | f | o | g]`.
    gates: Matrix,
    c_prev: Matrix,
    tanh_c: Matrix,
}

#[derive(Debug, Clone)]
pub struct LstmSequenceCache {
    pub steps: Vec<LstmStepCache>,
    pub h: Matrix,
    pub c: Matrix,
}

impl Lstm {
    pub fn zeros(spec: LstmSpec, name: &str) -> Result<Self> {
        if spec.input_dim == 0 || spec.hidden_dim == 0 {
            return Err(Error::validation(format!("lstm {name} needs positive dimensions")));
        }
        let rows = spec.input_dim + spec.hidden_dim;
        Ok(Self {
            spec,
            weight: ParameterBlock::zeros(format!("{name}.weight"), vec![rows, 4 * spec.hidden_dim]),
            bias: ParameterBlock::zeros(format!("{name}.bias"), vec![4 * spec.hidden_dim]),
        })
    }

    /// Glorot-uniform weights, zero biases except the forget gate at +1.
    pub fn new<R: Rng + ?Sized>(spec: LstmSpec, name: &str, rng: &mut R) -> Result<Self> {
        let mut cell = Self::zeros(spec, name)?;
        let limit = glorot_limit(spec.input_dim + spec.hidden_dim, spec.hidden_dim);
        for w in &mut cell.weight.values {
            *w = rng.gen_range(-limit..=limit);
        }
        let h = spec.hidden_dim;
        cell.bias.values[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        Ok(cell)
    }

    pub fn spec(&self) -> LstmSpec {
        self.spec
    }

    /// One step for a batch: `x` is `B x input`, `h_prev`/`c_prev` are `B x hidden`.
    pub fn step(&self, x: &Matrix, h_prev: &Matrix, c_prev: &Matrix) -> Result<(Matrix, Matrix, LstmStepCache)> {
        let hd = self.spec.hidden_dim;
        check_len("Lstm::step input width", self.spec.input_dim, x.cols())?;
        check_len("Lstm::step hidden width", hd, h_prev.cols())?;
        check_len("Lstm::step cell width", hd, c_prev.cols())?;
        check_len("Lstm::step batch", x.rows(), h_prev.rows())?;
        check_len("Lstm::step batch", x.rows(), c_prev.rows())?;
        let b = x.rows();
        let xh = x.hstack(h_prev)?;
        let mut gates = Matrix::zeros(b, 4 * hd);
        for r in 0..b {
            gates.row_mut(r).copy_from_slice(&self.bias.values);
        }
        gemm(b, xh.cols(), 4 * hd, xh.data(), false, &self.weight.values, false, 1.0, gates.data_mut());
        let mut h = Matrix::zeros(b, hd);
        let mut c = Matrix::zeros(b, hd);
        let mut tanh_c = Matrix::zeros(b, hd);
        for r in 0..b {
            let g = gates.row_mut(r);
            for v in &mut g[..3 * hd] {
                *v = sigmoid(*v);
            }
            for v in &mut g[3 * hd..] {
                *v = v.tanh();
            }
            let g = gates.row(r);
            let cp = c_prev.row(r);
            for j in 0..hd {
                let (i, f, o, cand) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let cj = f * cp[j] + i * cand;
                let tc = cj.tanh();
                c.row_mut(r)[j] = cj;
                tanh_c.row_mut(r)[j] = tc;
                h.row_mut(r)[j] = o * tc;
            }
        }
        let cache = LstmStepCache {
            xh,
            gates,
            c_prev: c_prev.clone(),
            tanh_c,
        };
        Ok((h, c, cache))
    }

    /// Unrolls over `inputs` (one `B x input` matrix per time step) from a
    /// zero state.
    pub fn forward_sequence(&self, inputs: &[Matrix]) -> Result<LstmSequenceCache> {
        let b = inputs.first().map_or(0, Matrix::rows);
        let mut h = Matrix::zeros(b, self.spec.hidden_dim);
        let mut c = Matrix::zeros(b, self.spec.hidden_dim);
        let mut steps = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (h2, c2, cache) = self.step(x, &h, &c)?;
            h = h2;
            c = c2;
            steps.push(cache);
        }
        Ok(LstmSequenceCache { steps, h, c })
    }

    /// Backpropagates through one step. Takes `dL/dh` and `dL/dc` at the
    /// step output, accumulates parameter gradients, and returns
    /// `(dL/dx, dL/dh_prev, dL/dc_prev)`.
    pub fn backward_step(
        &mut self,
        cache: &LstmStepCache,
        dh: &Matrix,
        dc_next: &Matrix,
    ) -> Result<(Matrix, Matrix, Matrix)> {
        let hd = self.spec.hidden_dim;
        let b = cache.xh.rows();
        check_len("Lstm::backward_step dh rows", b, dh.rows())?;
        check_len("Lstm::backward_step dh cols", hd, dh.cols())?;
        let mut dz = Matrix::zeros(b, 4 * hd);
        let mut dc_prev = Matrix::zeros(b, hd);
        for r in 0..b {
            let g = cache.gates.row(r);
            let tc = cache.tanh_c.row(r);
            let cp = cache.c_prev.row(r);
            let dhr = dh.row(r);
            let dcr = dc_next.row(r);
            let dzr = dz.row_mut(r);
            for j in 0..hd {
                let (i, f, o, cand) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let d_o = dhr[j] * tc[j];
                let dc = dcr[j] + dhr[j] * o * (1.0 - tc[j] * tc[j]);
                let d_i = dc * cand;
                let d_g = dc * i;
                let d_f = dc * cp[j];
                dzr[j] = d_i * i * (1.0 - i);
                dzr[hd + j] = d_f * f * (1.0 - f);
                dzr[2 * hd + j] = d_o * o * (1.0 - o);
                dzr[3 * hd + j] = d_g * (1.0 - cand * cand);
                dc_prev.row_mut(r)[j] = dc * f;
            }
        }
        let rows = self.spec.input_dim + hd;
        gemm(rows, b, 4 * hd, cache.xh.data(), true, dz.data(), false, 1.0, &mut self.weight.grad);
        for r in 0..b {
            for (gb, &d) in self.bias.grad.iter_mut().zip(dz.row(r)) {
                *gb += d;
            }
        }
        let mut dxh = Matrix::zeros(b, rows);
        gemm(b, 4 * hd, rows, dz.data(), false, &self.weight.values, true, 0.0, dxh.data_mut());
        let dx = dxh.columns(0, self.spec.input_dim);
        let dh_prev = dxh.columns(self.spec.input_dim, hd);
        Ok((dx, dh_prev, dc_prev))
    }

    /// Backpropagation through time from a gradient on the final hidden
    /// state. Returns the per-step input gradients.
    pub fn backward_sequence(&mut self, cache: &LstmSequenceCache, dh_last: &Matrix) -> Result<Vec<Matrix>> {
        let b = dh_last.rows();
        let mut dh = dh_last.clone();
        let mut dc = Matrix::zeros(b, self.spec.hidden_dim);
        let mut dxs = vec![Matrix::default(); cache.steps.len()];
        for (t, step) in cache.steps.iter().enumerate().rev() {
            let (dx, dh_prev, dc_prev) = self.backward_step(step, &dh, &dc)?;
            dxs[t] = dx;
            dh = dh_prev;
            dc = dc_prev;
        }
        Ok(dxs)
    }
}

impl Parameterized for Lstm {
    fn blocks(&self) -> Vec<&ParameterBlock> {
        vec![&self.weight, &self.bias]
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParameterBlock> {
        vec![&mut self.weight, &mut self.bias]
    }
}
