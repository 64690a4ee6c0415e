//! Scaled dot-product attention and the multi-head self-attention layer.
//!
//! Batched inputs are `(B·T) × d` matrices holding `B` sequences of `T` steps
//! back to back. Each head works on a column block of width `d / h`; heads and
//! sequences are addressed through strided views, never copied.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor2, View, ViewMut};

use super::param::Parameter;

/// `softmax(Q Kᵀ / √d_k) V` for one sequence.
pub fn attention(q: &Tensor2, k: &Tensor2, v: &Tensor2) -> Result<Tensor2> {
    attention_with_probs(q, k, v).map(|(o, _)| o)
}

/// Like [`attention`], also returning the `T × T` attention weights.
pub fn attention_with_probs(q: &Tensor2, k: &Tensor2, v: &Tensor2) -> Result<(Tensor2, Tensor2)> {
    if q.cols() != k.cols() {
        return Err(Error::shape(format!(
            "query width {} differs from key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape(format!(
            "{} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    let mut probs = Tensor2::zeros(q.rows(), k.rows());
    let mut out = Tensor2::zeros(q.rows(), v.cols());
    attend(q.view(), k.view(), v.view(), probs.data_mut(), out.view_mut());
    Ok((out, probs))
}

/// Core kernel: fills `probs` (row-major `tq × tk`) and `out`.
fn attend(q: View<'_>, k: View<'_>, v: View<'_>, probs: &mut [f64], out: ViewMut<'_>) {
    let (tq, dk) = q.shape();
    let tk = k.shape().0;
    let scale = 1.0 / (dk as f64).sqrt();
    gemm(scale, q, k.t(), 0.0, ViewMut::strided(probs, 0, tq, tk, tk));
    for r in 0..tq {
        softmax_in_place(&mut probs[r * tk..(r + 1) * tk]);
    }
    gemm(1.0, View::strided(probs, 0, tq, tk, tk), v, 0.0, out);
}

/// Numerically guarded softmax (max subtraction).
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Multi-head self-attention: per-head projections `W_h^Q, W_h^K, W_h^V`
/// (stored side by side as `d × d` matrices, head `h` owning columns
/// `h·d_k..(h+1)·d_k`) followed by the shared output projection `W^S`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub wq: Parameter,
    pub wk: Parameter,
    pub wv: Parameter,
    pub ws: Parameter,
}

#[derive(Debug, Clone)]
pub struct MhaCache {
    q: Tensor2,
    k: Tensor2,
    v: Tensor2,
    concat: Tensor2,
    /// `B·h` blocks of `T × T` attention weights.
    probs: Vec<f64>,
}

impl MhaCache {
    /// Attention weights of sequence `b`, head `h`.
    pub fn probs(&self, seq_len: usize, heads: usize, b: usize, h: usize) -> &[f64] {
        let block = seq_len * seq_len;
        let i = b * heads + h;
        &self.probs[i * block..(i + 1) * block]
    }
}

impl MultiHeadAttention {
    pub fn new(prefix: &str, dim: usize, heads: usize, seed: u64) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "model dimension {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            heads,
            wq: Parameter::glorot(format!("{prefix}.wq"), dim, dim, seed),
            wk: Parameter::glorot(format!("{prefix}.wk"), dim, dim, seed),
            wv: Parameter::glorot(format!("{prefix}.wv"), dim, dim, seed),
            ws: Parameter::glorot(format!("{prefix}.ws"), dim, dim, seed),
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.value.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    /// `x` holds `rows / seq_len` sequences of `seq_len` steps.
    pub fn forward(&self, x: &Tensor2, seq_len: usize) -> Result<(Tensor2, MhaCache)> {
        let d = self.dim();
        if x.cols() != d {
            return Err(Error::shape(format!(
                "attention layer expects width {d}, got {}",
                x.cols()
            )));
        }
        let batch = batch_count(x.rows(), seq_len)?;
        let q = x.matmul(&self.wq.value)?;
        let k = x.matmul(&self.wk.value)?;
        let v = x.matmul(&self.wv.value)?;
        let dk = self.head_dim();
        let block = seq_len * seq_len;
        let mut probs = vec![0.0; batch * self.heads * block];
        let mut concat = Tensor2::zeros(x.rows(), d);
        for b in 0..batch {
            for h in 0..self.heads {
                let off = b * seq_len * d + h * dk;
                let p = &mut probs[(b * self.heads + h) * block..][..block];
                attend(
                    View::strided(q.data(), off, seq_len, dk, d),
                    View::strided(k.data(), off, seq_len, dk, d),
                    View::strided(v.data(), off, seq_len, dk, d),
                    p,
                    ViewMut::strided(concat.data_mut(), off, seq_len, dk, d),
                );
            }
        }
        let out = concat.matmul(&self.ws.value)?;
        Ok((
            out,
            MhaCache {
                q,
                k,
                v,
                concat,
                probs,
            },
        ))
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, x: &Tensor2, cache: &MhaCache, dout: &Tensor2, seq_len: usize) -> Tensor2 {
        let d = self.dim();
        let dk = self.head_dim();
        let batch = x.rows() / seq_len;
        let block = seq_len * seq_len;
        let scale = 1.0 / (dk as f64).sqrt();

        gemm(1.0, cache.concat.view().t(), dout.view(), 1.0, self.ws.grad.view_mut());
        let mut dconcat = Tensor2::zeros(x.rows(), d);
        gemm(1.0, dout.view(), self.ws.value.view().t(), 0.0, dconcat.view_mut());

        let mut dq = Tensor2::zeros(x.rows(), d);
        let mut dk_m = Tensor2::zeros(x.rows(), d);
        let mut dv = Tensor2::zeros(x.rows(), d);
        let mut dp = vec![0.0; block];
        for b in 0..batch {
            for h in 0..self.heads {
                let off = b * seq_len * d + h * dk;
                let p = &cache.probs[(b * self.heads + h) * block..][..block];
                let pv = View::strided(p, 0, seq_len, seq_len, seq_len);
                let dc = View::strided(dconcat.data(), off, seq_len, dk, d);
                // dP = dC Vᵀ ; dV = Pᵀ dC
                gemm(
                    1.0,
                    dc,
                    View::strided(cache.v.data(), off, seq_len, dk, d).t(),
                    0.0,
                    ViewMut::strided(&mut dp, 0, seq_len, seq_len, seq_len),
                );
                gemm(1.0, pv.t(), dc, 0.0, ViewMut::strided(dv.data_mut(), off, seq_len, dk, d));
                // softmax backward, folded with the 1/√d_k scale
                for r in 0..seq_len {
                    let pr = &p[r * seq_len..(r + 1) * seq_len];
                    let dr = &mut dp[r * seq_len..(r + 1) * seq_len];
                    let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for (g, pi) in dr.iter_mut().zip(pr) {
                        *g = pi * (*g - dot) * scale;
                    }
                }
                let ds = View::strided(&dp, 0, seq_len, seq_len, seq_len);
                gemm(
                    1.0,
                    ds,
                    View::strided(cache.k.data(), off, seq_len, dk, d),
                    0.0,
                    ViewMut::strided(dq.data_mut(), off, seq_len, dk, d),
                );
                gemm(
                    1.0,
                    ds.t(),
                    View::strided(cache.q.data(), off, seq_len, dk, d),
                    0.0,
                    ViewMut::strided(dk_m.data_mut(), off, seq_len, dk, d),
                );
            }
        }
        let mut dx = Tensor2::zeros(x.rows(), d);
        for (w, g) in [(&mut self.wq, &dq), (&mut self.wk, &dk_m), (&mut self.wv, &dv)] {
            gemm(1.0, x.view().t(), g.view(), 1.0, w.grad.view_mut());
            gemm(1.0, g.view(), w.value.view().t(), 1.0, dx.view_mut());
        }
        dx
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.wq, &self.wk, &self.wv, &self.ws]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.wq, &mut self.wk, &mut self.wv, &mut self.ws]
    }
}

pub(crate) fn batch_count(rows: usize, seq_len: usize) -> Result<usize> {
    if seq_len == 0 || !rows.is_multiple_of(seq_len) {
        return Err(Error::shape(format!(
            "{rows} rows do not split into sequences of length {seq_len}"
        )));
    }
    Ok(rows / seq_len)
}
