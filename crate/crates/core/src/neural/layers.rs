//! Affine and normalisation layers.

use crate::tensor::{gemm, Tensor2};

use super::param::Parameter;

/// `y = x · W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Parameter,
    pub b: Parameter,
}

impl Linear {
    pub fn new(prefix: &str, fan_in: usize, fan_out: usize, seed: u64) -> Self {
        Linear {
            w: Parameter::glorot(format!("{prefix}.w"), fan_in, fan_out, seed),
            b: Parameter::zeros(format!("{prefix}.b"), 1, fan_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.value.cols()
    }

    pub fn forward(&self, x: &Tensor2) -> Tensor2 {
        let mut y = Tensor2::zeros(x.rows(), self.out_dim());
        let b = self.b.value.row(0);
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(b);
        }
        gemm(1.0, x.view(), self.w.value.view(), 1.0, y.view_mut());
        y
    }

    /// Accumulates parameter gradients; returns `dx` when requested.
    pub fn backward(&mut self, x: &Tensor2, dy: &Tensor2, need_dx: bool) -> Option<Tensor2> {
        gemm(1.0, x.view().t(), dy.view(), 1.0, self.w.grad.view_mut());
        let gb = self.b.grad.row_mut(0);
        for r in 0..dy.rows() {
            for (g, d) in gb.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        need_dx.then(|| {
            let mut dx = Tensor2::zeros(x.rows(), x.cols());
            gemm(1.0, dy.view(), self.w.value.view().t(), 0.0, dx.view_mut());
            dx
        })
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.b]
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer normalisation with learned gain and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Tensor2,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(prefix: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: Parameter::new(format!("{prefix}.gamma"), Tensor2::filled(1, dim, 1.0)),
            beta: Parameter::zeros(format!("{prefix}.beta"), 1, dim),
        }
    }

    pub fn forward(&self, x: &Tensor2) -> (Tensor2, LayerNormCache) {
        let d = x.cols() as f64;
        let mut xhat = Tensor2::zeros(x.rows(), x.cols());
        let mut y = Tensor2::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        let (g, b) = (self.gamma.value.row(0), self.beta.value.row(0));
        for r in 0..x.rows() {
            let row = x.row(r);
            let mu = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(r);
            for (o, v) in xh.iter_mut().zip(row) {
                *o = (v - mu) * is;
            }
            let xh = xhat.row(r).to_vec();
            for (((o, v), gi), bi) in y.row_mut(r).iter_mut().zip(&xh).zip(g).zip(b) {
                *o = gi * v + bi;
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Tensor2) -> Tensor2 {
        let cols = dy.cols();
        let d = cols as f64;
        let mut dx = Tensor2::zeros(dy.rows(), cols);
        let g = self.gamma.value.row(0).to_vec();
        let mut dxhat = vec![0.0; cols];
        for r in 0..dy.rows() {
            let xh = cache.xhat.row(r);
            let dyr = dy.row(r);
            {
                let gg = self.gamma.grad.row_mut(0);
                for i in 0..cols {
                    gg[i] += dyr[i] * xh[i];
                }
            }
            {
                let gb = self.beta.grad.row_mut(0);
                for i in 0..cols {
                    gb[i] += dyr[i];
                }
            }
            let mut sum = 0.0;
            let mut sum_x = 0.0;
            for i in 0..cols {
                dxhat[i] = dyr[i] * g[i];
                sum += dxhat[i];
                sum_x += dxhat[i] * xh[i];
            }
            let is = cache.inv_std[r];
            for (i, o) in dx.row_mut(r).iter_mut().enumerate() {
                *o = is / d * (d * dxhat[i] - sum - xh[i] * sum_x);
            }
        }
        dx
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
