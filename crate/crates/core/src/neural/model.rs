//! The full regressor: optional input projection, a stack of attention
//! blocks, a stack of (bi)LSTM layers, and a linear head.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

use super::attention::{batch_count, MhaCache, MultiHeadAttention};
use super::layers::{LayerNorm, LayerNormCache, Linear};
use super::lstm::{LstmLayer, LstmLayerCache};
use super::param::{param_rng, Parameter};

pub const DEFAULT_LSTM_HIDDEN: usize = 64;
pub const CHECKPOINT_VERSION: u32 = 1;

fn default_hidden() -> usize {
    DEFAULT_LSTM_HIDDEN
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Width of the raw input, segment channel included.
    pub input_dim: usize,
    /// Attention width; `None` picks `input_dim` rounded up to a multiple of `heads`.
    #[serde(default)]
    pub model_dim: Option<usize>,
    pub heads: usize,
    pub mhal_layers: usize,
    pub lstm_layers: usize,
    pub bidirectional: bool,
    #[serde(default = "default_hidden")]
    pub lstm_hidden: usize,
    pub output_dims: usize,
    /// Residual connection plus layer norm around each attention block.
    #[serde(default = "default_true")]
    pub residual: bool,
    pub seed: u64,
}

impl ModelSpec {
    /// Attention + bidirectional LSTM with one layer of each.
    pub fn deep_trust(input_dim: usize, heads: usize, seed: u64) -> Self {
        ModelSpec {
            input_dim,
            model_dim: None,
            heads,
            mhal_layers: 1,
            lstm_layers: 1,
            bidirectional: true,
            lstm_hidden: DEFAULT_LSTM_HIDDEN,
            output_dims: 1,
            residual: true,
            seed,
        }
    }

    pub fn resolved_model_dim(&self) -> usize {
        match self.model_dim {
            Some(d) => d,
            None if self.heads == 0 => self.input_dim,
            None => self.input_dim.div_ceil(self.heads) * self.heads,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dims == 0 {
            return Err(Error::config("input and output widths must be positive"));
        }
        if self.mhal_layers == 0 && self.lstm_layers == 0 {
            return Err(Error::config("need at least one attention or LSTM layer"));
        }
        if self.mhal_layers > 0 {
            let d = self.resolved_model_dim();
            if self.heads == 0 || d == 0 || !d.is_multiple_of(self.heads) {
                return Err(Error::config(format!(
                    "model dimension {d} is not divisible by {} heads",
                    self.heads
                )));
            }
        }
        if self.lstm_layers > 0 && self.lstm_hidden == 0 {
            return Err(Error::config("lstm_hidden must be positive"));
        }
        Ok(())
    }

    /// Number of scalar parameters, computed from the shape alone.
    pub fn param_count(&self) -> usize {
        let d = self.resolved_model_dim();
        let mut n = 0;
        let mut width = self.input_dim;
        if self.mhal_layers > 0 {
            n += width * d + d;
            let per = 4 * d * d + if self.residual { 2 * d } else { 0 };
            n += self.mhal_layers * per;
            width = d;
        }
        let dirs = if self.bidirectional { 2 } else { 1 };
        let h = self.lstm_hidden;
        for _ in 0..self.lstm_layers {
            n += dirs * (width * 4 * h + h * 4 * h + 4 * h);
            width = dirs * h;
        }
        n + width * self.output_dims + self.output_dims
    }
}

#[derive(Debug, Clone, PartialEq)]
struct MhalBlock {
    attn: MultiHeadAttention,
    norm: Option<LayerNorm>,
}

struct BlockCache {
    input: Tensor2,
    attn: MhaCache,
    norm: Option<LayerNormCache>,
}

struct ForwardCache {
    seq_len: usize,
    input: Tensor2,
    blocks: Vec<BlockCache>,
    lstm_inputs: Vec<Tensor2>,
    lstm: Vec<LstmLayerCache>,
    head_input: Tensor2,
}

/// Model parameters plus the activations of the most recent
/// [`Model::forward`], which [`Model::backward`] consumes.
pub struct Model {
    spec: ModelSpec,
    proj: Option<Linear>,
    blocks: Vec<MhalBlock>,
    lstm: Vec<LstmLayer>,
    head: Linear,
    cache: Option<ForwardCache>,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            spec: self.spec.clone(),
            proj: self.proj.clone(),
            blocks: self.blocks.clone(),
            lstm: self.lstm.clone(),
            head: self.head.clone(),
            cache: None,
        }
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("spec", &self.spec)
            .field("params", &self.param_count())
            .finish()
    }
}

/// Regression head whose output columns are drawn from independent streams,
/// so column `j` starts the same regardless of how many outputs exist.
fn head_layer(fan_in: usize, outputs: usize, seed: u64) -> Linear {
    let limit = (6.0 / (fan_in + 1) as f64).sqrt();
    let mut w = Tensor2::zeros(fan_in, outputs);
    for j in 0..outputs {
        let mut rng = param_rng(seed, "head.w", j as u64);
        for i in 0..fan_in {
            w.row_mut(i)[j] = rng.random_range(-limit..=limit);
        }
    }
    Linear {
        w: Parameter::new("head.w", w),
        b: Parameter::zeros("head.b", 1, outputs),
    }
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let seed = spec.seed;
        let d = spec.resolved_model_dim();
        let mut width = spec.input_dim;
        let proj = (spec.mhal_layers > 0).then(|| Linear::new("proj", spec.input_dim, d, seed));
        let mut blocks = Vec::with_capacity(spec.mhal_layers);
        for i in 0..spec.mhal_layers {
            blocks.push(MhalBlock {
                attn: MultiHeadAttention::new(&format!("mhal{i}.attn"), d, spec.heads, seed)?,
                norm: spec.residual.then(|| LayerNorm::new(&format!("mhal{i}.norm"), d)),
            });
            width = d;
        }
        let mut lstm = Vec::with_capacity(spec.lstm_layers);
        for i in 0..spec.lstm_layers {
            let layer = LstmLayer::new(&format!("lstm{i}"), width, spec.lstm_hidden, spec.bidirectional, seed);
            width = layer.output_dim();
            lstm.push(layer);
        }
        let head = head_layer(width, spec.output_dims, seed);
        Ok(Model {
            spec,
            proj,
            blocks,
            lstm,
            head,
            cache: None,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check_input(&self, x: &Tensor2, seq_len: usize) -> Result<()> {
        if x.cols() != self.spec.input_dim {
            return Err(Error::shape(format!(
                "model expects {} input columns, got {}",
                self.spec.input_dim,
                x.cols()
            )));
        }
        batch_count(x.rows(), seq_len).map(|_| ())
    }

    /// Predictions for `x`, which stacks `rows / seq_len` sequences.
    /// Activations are kept for a following [`Model::backward`].
    pub fn forward(&mut self, x: &Tensor2, seq_len: usize) -> Result<Tensor2> {
        let (y, cache) = self.run(x, seq_len, true)?;
        self.cache = cache;
        Ok(y)
    }

    /// Inference without keeping activations.
    pub fn predict(&self, x: &Tensor2, seq_len: usize) -> Result<Tensor2> {
        Ok(self.run(x, seq_len, false)?.0)
    }

    fn run(&self, x: &Tensor2, seq_len: usize, keep: bool) -> Result<(Tensor2, Option<ForwardCache>)> {
        self.check_input(x, seq_len)?;
        let mut h = match &self.proj {
            Some(p) => p.forward(x),
            None => x.clone(),
        };
        let mut block_caches = Vec::new();
        for block in &self.blocks {
            let (a, ac) = block.attn.forward(&h, seq_len)?;
            let (out, nc) = match &block.norm {
                Some(norm) => {
                    let mut sum = a;
                    sum.add_assign(&h)?;
                    let (y, c) = norm.forward(&sum);
                    (y, Some(c))
                }
                None => (a, None),
            };
            if keep {
                block_caches.push(BlockCache {
                    input: std::mem::replace(&mut h, out),
                    attn: ac,
                    norm: nc,
                });
            } else {
                h = out;
            }
        }
        let mut lstm_inputs = Vec::new();
        let mut lstm_caches = Vec::new();
        for layer in &self.lstm {
            let (out, c) = layer.run(&h, seq_len)?;
            if keep {
                lstm_inputs.push(std::mem::replace(&mut h, out));
                lstm_caches.push(c);
            } else {
                h = out;
            }
        }
        let y = self.head.forward(&h);
        let cache = keep.then(|| ForwardCache {
            seq_len,
            input: x.clone(),
            blocks: block_caches,
            lstm_inputs,
            lstm: lstm_caches,
            head_input: h,
        });
        Ok((y, cache))
    }

    /// Accumulates `∂L/∂θ` into every parameter's `grad` given `∂L/∂y` for
    /// the outputs of the last forward pass. Consumes the stored activations.
    pub fn backward(&mut self, dy: &Tensor2) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Usage("backward called without a preceding forward".into()))?;
        let expect = (cache.input.rows(), self.spec.output_dims);
        if dy.shape() != expect {
            return Err(Error::shape(format!(
                "upstream gradient is {:?}, outputs are {:?}",
                dy.shape(),
                expect
            )));
        }
        let seq_len = cache.seq_len;
        let mut g = self.head.backward(&cache.head_input, dy, true).expect("requested");
        for (i, layer) in self.lstm.iter_mut().enumerate().rev() {
            g = layer.backprop(&cache.lstm_inputs[i], &cache.lstm[i], &g, seq_len);
        }
        for (block, bc) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            match (&mut block.norm, &bc.norm) {
                (Some(norm), Some(nc)) => {
                    let ds = norm.backward(nc, &g);
                    let mut dx = block.attn.backward(&bc.input, &bc.attn, &ds, seq_len);
                    dx.add_assign(&ds)?;
                    g = dx;
                }
                _ => g = block.attn.backward(&bc.input, &bc.attn, &g, seq_len),
            }
        }
        if let Some(p) = &mut self.proj {
            p.backward(&cache.input, &g, false);
        }
        Ok(())
    }

    /// Parameters in a fixed order: projection, attention blocks, LSTM
    /// layers, head.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        if let Some(p) = &self.proj {
            out.extend(p.params());
        }
        for b in &self.blocks {
            out.extend(b.attn.params());
            if let Some(n) = &b.norm {
                out.extend(n.params());
            }
        }
        for l in &self.lstm {
            out.extend(l.params());
        }
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        if let Some(p) = &mut self.proj {
            out.extend(p.params_mut());
        }
        for b in &mut self.blocks {
            out.extend(b.attn.params_mut());
            if let Some(n) = &mut b.norm {
                out.extend(n.params_mut());
            }
        }
        for l in &mut self.lstm {
            out.extend(l.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.grad.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        self.cache = None;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            params: self.flat_params(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        let mut m = Model::new(ck.spec.clone())?;
        m.set_flat_params(&ck.params)?;
        Ok(m)
    }
}

/// Model spec plus flat parameter vector. JSON floats round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: ModelSpec,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let want = ck.spec.param_count();
        if ck.params.len() != want {
            return Err(Error::Integrity(format!(
                "checkpoint holds {} parameters, spec needs {want}",
                ck.params.len()
            )));
        }
        Ok(ck)
    }
}
