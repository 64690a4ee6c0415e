//! LSTM layers with exact backpropagation through time.
//!
//! Gate pre-activations are laid out `[input | forget | candidate | output]`,
//! each `hidden` columns wide. All sequences of a batch advance one step at a
//! time; the recurrent product for step `t` is a single strided GEMM over the
//! batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor2, View, ViewMut};

use super::attention::batch_count;
use super::param::Parameter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// One unidirectional LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub direction: Direction,
    pub w_ih: Parameter,
    pub w_hh: Parameter,
    pub b: Parameter,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Activated gates `[i, f, g, o]`, `(B·T) × 4H`.
    gates: Tensor2,
    /// Cell states, `(B·T) × H`.
    cell: Tensor2,
    /// Hidden outputs, `(B·T) × H`.
    hidden: Tensor2,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    /// Glorot-initialised weights, zero biases except the forget gate at 1.
    pub fn new(prefix: &str, input: usize, hidden: usize, direction: Direction, seed: u64) -> Self {
        let mut b = Parameter::zeros(format!("{prefix}.b"), 1, 4 * hidden);
        b.value.row_mut(0)[hidden..2 * hidden].fill(1.0);
        Lstm {
            direction,
            w_ih: Parameter::glorot(format!("{prefix}.w_ih"), input, 4 * hidden, seed),
            w_hh: Parameter::glorot(format!("{prefix}.w_hh"), hidden, 4 * hidden, seed),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.value.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.value.rows()
    }

    /// Processing order of the steps of one sequence.
    fn step_index(&self, s: usize, seq_len: usize) -> usize {
        match self.direction {
            Direction::Forward => s,
            Direction::Backward => seq_len - 1 - s,
        }
    }

    /// Runs from zero initial state; output row `t` is the hidden state after
    /// consuming step `t` (in this layer's direction).
    pub fn forward(&self, x: &Tensor2, seq_len: usize) -> Result<(Tensor2, LstmCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "LSTM expects width {}, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let batch = batch_count(x.rows(), seq_len)?;
        let hd = self.hidden();
        let g4 = 4 * hd;
        // input contribution for every step at once
        let mut gates = Tensor2::zeros(x.rows(), g4);
        let bias = self.b.value.row(0);
        for r in 0..gates.rows() {
            gates.row_mut(r).copy_from_slice(bias);
        }
        gemm(1.0, x.view(), self.w_ih.value.view(), 1.0, gates.view_mut());

        let mut cell = Tensor2::zeros(x.rows(), hd);
        let mut hidden = Tensor2::zeros(x.rows(), hd);
        for s in 0..seq_len {
            let t = self.step_index(s, seq_len);
            if s > 0 {
                let prev = self.step_index(s - 1, seq_len);
                gemm(
                    1.0,
                    View::strided(hidden.data(), prev * hd, batch, hd, seq_len * hd),
                    self.w_hh.value.view(),
                    1.0,
                    ViewMut::strided(gates.data_mut(), t * g4, batch, g4, seq_len * g4),
                );
            }
            for b in 0..batch {
                let r = b * seq_len + t;
                let prev_c: Option<Vec<f64>> = (s > 0).then(|| {
                    let pr = b * seq_len + self.step_index(s - 1, seq_len);
                    cell.row(pr).to_vec()
                });
                let g = gates.row_mut(r);
                for j in 0..hd {
                    g[j] = sigmoid(g[j]);
                    g[hd + j] = sigmoid(g[hd + j]);
                    g[2 * hd + j] = g[2 * hd + j].tanh();
                    g[3 * hd + j] = sigmoid(g[3 * hd + j]);
                }
                let g = gates.row(r).to_vec();
                let c = cell.row_mut(r);
                for j in 0..hd {
                    let cp = prev_c.as_ref().map_or(0.0, |p| p[j]);
                    c[j] = g[hd + j] * cp + g[j] * g[2 * hd + j];
                }
                let c = cell.row(r).to_vec();
                let h = hidden.row_mut(r);
                for j in 0..hd {
                    h[j] = g[3 * hd + j] * c[j].tanh();
                }
            }
        }
        let out = hidden.clone();
        Ok((out, LstmCache { gates, cell, hidden }))
    }

    /// Backpropagation through time. Accumulates parameter gradients and
    /// returns `dx`.
    pub fn backward(&mut self, x: &Tensor2, cache: &LstmCache, dout: &Tensor2, seq_len: usize) -> Tensor2 {
        let hd = self.hidden();
        let g4 = 4 * hd;
        let batch = x.rows() / seq_len;
        let mut dgates = Tensor2::zeros(x.rows(), g4);
        // gradient flowing into h_{t} from step t+1 (in processing order)
        let mut dh_rec = Tensor2::zeros(batch, hd);
        let mut dc_next = Tensor2::zeros(batch, hd);
        for s in (0..seq_len).rev() {
            let t = self.step_index(s, seq_len);
            let prev = (s > 0).then(|| self.step_index(s - 1, seq_len));
            for b in 0..batch {
                let r = b * seq_len + t;
                let g = cache.gates.row(r);
                let c = cache.cell.row(r);
                let up = dout.row(r);
                let dhr = dh_rec.row(b).to_vec();
                let cp: Option<&[f64]> = prev.map(|p| cache.cell.row(b * seq_len + p));
                let dcn = dc_next.row_mut(b);
                let dg = dgates.row_mut(r);
                for j in 0..hd {
                    let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                    let tc = c[j].tanh();
                    let dh = up[j] + dhr[j];
                    let dc = dcn[j] + dh * o * (1.0 - tc * tc);
                    let cprev = cp.map_or(0.0, |p| p[j]);
                    dg[j] = dc * gg * i * (1.0 - i);
                    dg[hd + j] = dc * cprev * f * (1.0 - f);
                    dg[2 * hd + j] = dc * i * (1.0 - gg * gg);
                    dg[3 * hd + j] = dh * tc * o * (1.0 - o);
                    dcn[j] = dc * f;
                }
            }
            let dg_t = View::strided(dgates.data(), t * g4, batch, g4, seq_len * g4);
            if let Some(p) = prev {
                gemm(
                    1.0,
                    View::strided(cache.hidden.data(), p * hd, batch, hd, seq_len * hd).t(),
                    dg_t,
                    1.0,
                    self.w_hh.grad.view_mut(),
                );
                gemm(1.0, dg_t, self.w_hh.value.view().t(), 0.0, dh_rec.view_mut());
            }
        }
        gemm(1.0, x.view().t(), dgates.view(), 1.0, self.w_ih.grad.view_mut());
        let gb = self.b.grad.row_mut(0);
        for r in 0..dgates.rows() {
            for (acc, v) in gb.iter_mut().zip(dgates.row(r)) {
                *acc += v;
            }
        }
        let mut dx = Tensor2::zeros(x.rows(), x.cols());
        gemm(1.0, dgates.view(), self.w_ih.value.view().t(), 0.0, dx.view_mut());
        dx
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.w_ih, &self.w_hh, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b]
    }
}

/// A forward LSTM, optionally paired with a backward one whose outputs are
/// concatenated per step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub forward: Lstm,
    pub backward: Option<Lstm>,
}

#[derive(Debug, Clone)]
pub struct LstmLayerCache {
    fwd: LstmCache,
    bwd: Option<LstmCache>,
}

impl LstmLayer {
    pub fn new(prefix: &str, input: usize, hidden: usize, bidirectional: bool, seed: u64) -> Self {
        LstmLayer {
            forward: Lstm::new(&format!("{prefix}.fwd"), input, hidden, Direction::Forward, seed),
            backward: bidirectional
                .then(|| Lstm::new(&format!("{prefix}.bwd"), input, hidden, Direction::Backward, seed)),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden() * if self.backward.is_some() { 2 } else { 1 }
    }

    pub fn run(&self, x: &Tensor2, seq_len: usize) -> Result<(Tensor2, LstmLayerCache)> {
        let (f, fc) = self.forward.forward(x, seq_len)?;
        match &self.backward {
            None => Ok((f, LstmLayerCache { fwd: fc, bwd: None })),
            Some(bl) => {
                let (b, bc) = bl.forward(x, seq_len)?;
                Ok((
                    Tensor2::hcat(&[&f, &b])?,
                    LstmLayerCache {
                        fwd: fc,
                        bwd: Some(bc),
                    },
                ))
            }
        }
    }

    pub fn backprop(&mut self, x: &Tensor2, cache: &LstmLayerCache, dout: &Tensor2, seq_len: usize) -> Tensor2 {
        let hd = self.forward.hidden();
        match (&mut self.backward, &cache.bwd) {
            (Some(bl), Some(bc)) => {
                let (df, db) = split_cols(dout, hd);
                let mut dx = self.forward.backward(x, &cache.fwd, &df, seq_len);
                let dxb = bl.backward(x, bc, &db, seq_len);
                dx.add_assign(&dxb).expect("same shape");
                dx
            }
            _ => self.forward.backward(x, &cache.fwd, dout, seq_len),
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut p = self.forward.params();
        if let Some(b) = &self.backward {
            p.extend(b.params());
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.forward.params_mut();
        if let Some(b) = &mut self.backward {
            p.extend(b.params_mut());
        }
        p
    }
}

fn split_cols(x: &Tensor2, at: usize) -> (Tensor2, Tensor2) {
    let mut a = Tensor2::zeros(x.rows(), at);
    let mut b = Tensor2::zeros(x.rows(), x.cols() - at);
    for r in 0..x.rows() {
        let row = x.row(r);
        a.row_mut(r).copy_from_slice(&row[..at]);
        b.row_mut(r).copy_from_slice(&row[at..]);
    }
    (a, b)
}
