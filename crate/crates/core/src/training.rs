//! Losses, Adam with plateau learning-rate reduction, the epoch loop with
//! best-on-dev checkpointing, and early / late multimodal fusion.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation_fusion::Dimension;
use crate::dataio::{Dataset, FeatureSequence, LabeledRecording, Modality, PartitionName, Partitions, Standardizer};
use crate::error::{Error, Result};
use crate::metrics::{ccc, MetricReport, ZERO_VARIANCE_EPS};
use crate::neural::{Checkpoint, Model, ModelSpec, Parameter};
use crate::tensor::Tensor2;
use crate::windowing::{segment_channel, stitch, window_spans, TailRule};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Windows per forward/backward pass; bounds activation memory.
pub const CHUNK_WINDOWS: usize = 32;
pub const LATE_FUSION_HIDDEN: usize = 8;

// ---------------------------------------------------------------------------
// Losses

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Ccc,
    L1,
    Mse,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ccc => "ccc",
            LossKind::L1 => "l1",
            LossKind::Mse => "mse",
        }
    }

    /// Loss and gradient for one window.
    pub fn window(self, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            LossKind::Ccc => ccc_loss(pred, target),
            LossKind::L1 => l1_loss(pred, target),
            LossKind::Mse => mse_loss(pred, target),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::arg(format!(
            "prediction length {} differs from target length {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::arg("empty sequence"));
    }
    Ok(())
}

/// `1 − CCC(pred, target)` for one window, with its gradient in `pred`.
/// A window whose CCC denominator vanishes contributes loss 1 and no gradient.
pub fn ccc_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, target)?;
    if pred.len() < 2 {
        return Err(Error::arg("CCC needs at least two steps"));
    }
    let n = pred.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = target.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pred.iter().zip(target) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let (sxy, sxx, syy) = (sxy / n, sxx / n, syy / n);
    let num = 2.0 * sxy;
    let den = sxx + syy + (mx - my) * (mx - my);
    if den <= ZERO_VARIANCE_EPS {
        return Ok((1.0, vec![0.0; pred.len()]));
    }
    let c = num / den;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(x, y)| {
            let dnum = 2.0 * (y - my) / n;
            let dden = 2.0 * (x - mx) / n + 2.0 * (mx - my) / n;
            -(dnum * den - num * dden) / (den * den)
        })
        .collect();
    Ok((1.0 - c, grad))
}

/// Mean absolute error; the subgradient at equality is 0.
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, target)?;
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss, grad))
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, target)?;
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

/// Per-window losses averaged over the windows of a stacked batch
/// (`pred.len() / seq_len` windows).
pub fn batch_loss(kind: LossKind, pred: &[f64], target: &[f64], seq_len: usize) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, target)?;
    if seq_len == 0 || !pred.len().is_multiple_of(seq_len) {
        return Err(Error::arg(format!(
            "{} steps do not split into windows of {seq_len}",
            pred.len()
        )));
    }
    let windows = pred.len() / seq_len;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for w in 0..windows {
        let r = w * seq_len..(w + 1) * seq_len;
        let (l, g) = kind.window(&pred[r.clone()], &target[r])?;
        total += l;
        grad.extend(g.into_iter().map(|v| v / windows as f64));
    }
    Ok((total / windows as f64, grad))
}

/// Task weights must be finite, nonnegative and sum to 1.
pub fn validate_task_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::config("task weights are empty"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::config(format!("task weights {weights:?} must be nonnegative")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("task weights {weights:?} sum to {sum}, not 1")));
    }
    Ok(())
}

/// Weighted sum of per-dimension batch losses. `preds` has one column per
/// dimension; zero-weighted dimensions are skipped and get zero gradient.
pub fn multitask_loss(
    kind: LossKind,
    preds: &Tensor2,
    targets: &[&[f64]],
    weights: &[f64],
    seq_len: usize,
) -> Result<(f64, Tensor2)> {
    validate_task_weights(weights)?;
    if preds.cols() != weights.len() || targets.len() != weights.len() {
        return Err(Error::config(format!(
            "{} weights for {} prediction columns and {} targets",
            weights.len(),
            preds.cols(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut grad = Tensor2::zeros(preds.rows(), preds.cols());
    for (k, (&w, target)) in weights.iter().zip(targets).enumerate() {
        if w == 0.0 {
            continue;
        }
        let (l, g) = batch_loss(kind, &preds.col(k), target, seq_len)?;
        total += w * l;
        for (r, gv) in g.into_iter().enumerate() {
            grad.row_mut(r)[k] = w * gv;
        }
    }
    Ok((total, grad))
}

// ---------------------------------------------------------------------------
// Optimiser and schedule

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor2>,
    pub v: Vec<Tensor2>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[&Parameter]) -> Self {
        let zeros = |p: &&Parameter| Tensor2::zeros(p.value.rows(), p.value.cols());
        AdamState {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update using each parameter's `grad`.
pub fn adam_step(params: &mut [&mut Parameter], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "optimiser tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if p.value.shape() != m.shape() || p.grad.shape() != m.shape() {
            return Err(Error::shape(format!("parameter {} changed shape", p.name)));
        }
        let g = p.grad.data().to_vec();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for ((x, gi), (mi, vi)) in p.value.data_mut().iter_mut().zip(&g).zip(md.iter_mut().zip(vd.iter_mut())) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *x -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Parameter], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .flat_map(|p| p.grad.data().iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.scale(k);
        }
    }
    norm
}

/// Reduce-on-plateau for a metric that should increase. The rate is
/// multiplied by `factor` once more than `patience` consecutive epochs pass
/// without a strict improvement; the counter then restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            min_lr,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's metric; returns true when the rate was reduced.
    pub fn step(&mut self, metric: f64) -> bool {
        match self.best {
            Some(b) if !(metric > b) => self.bad_epochs += 1,
            _ => {
                self.best = Some(metric);
                self.bad_epochs = 0;
            }
        }
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            let next = (self.lr * self.factor).max(self.min_lr);
            let reduced = next < self.lr;
            self.lr = next;
            return reduced;
        }
        false
    }
}

// ---------------------------------------------------------------------------
// Configuration

fn d_lr() -> f64 {
    0.001
}
fn d_batch() -> usize {
    512
}
fn d_epochs() -> usize {
    100
}
fn d_patience() -> usize {
    10
}
fn d_factor() -> f64 {
    0.5
}
fn d_min_lr() -> f64 {
    1e-6
}
fn d_ws() -> usize {
    200
}
fn d_hs() -> usize {
    100
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Windows per optimiser step, clipped to the number of training windows.
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_patience")]
    pub plateau_patience: usize,
    #[serde(default = "d_factor")]
    pub plateau_factor: f64,
    #[serde(default = "d_min_lr")]
    pub min_lr: f64,
    /// `(trust, arousal, valence)` weights; `None` trains trust alone.
    #[serde(default)]
    pub task_weights: Option<Vec<f64>>,
    #[serde(default = "d_ws")]
    pub ws: usize,
    #[serde(default = "d_hs")]
    pub hs: usize,
    #[serde(default)]
    pub tail_rule: TailRule,
    /// Input modalities; empty means every modality of the dataset.
    #[serde(default)]
    pub modalities: Vec<Modality>,
    /// Append the scaled segment id as an extra input column.
    #[serde(default = "d_true")]
    pub segment_channel: bool,
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    /// Stop after this many epochs without dev improvement.
    #[serde(default)]
    pub early_stop: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size and max_epochs must be positive"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::config("plateau_factor must lie in (0, 1)"));
        }
        if self.ws == 0 || self.hs == 0 || self.hs > self.ws {
            return Err(Error::config(format!("need 1 <= hs <= ws, got ws={} hs={}", self.ws, self.hs)));
        }
        if let Some(w) = &self.task_weights {
            validate_task_weights(w)?;
            if w.len() != Dimension::ALL.len() {
                return Err(Error::config(format!(
                    "multitask needs {} weights, got {}",
                    Dimension::ALL.len(),
                    w.len()
                )));
            }
        }
        Ok(())
    }

    pub fn dimensions(&self) -> Vec<Dimension> {
        match self.task_weights {
            Some(_) => Dimension::ALL.to_vec(),
            None => vec![Dimension::Trustworthiness],
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.task_weights.clone().unwrap_or_else(|| vec![1.0])
    }

    pub fn output_dims(&self) -> usize {
        self.dimensions().len()
    }

    /// Modalities used, in canonical order.
    pub fn resolved_modalities(&self, dataset: &Dataset) -> Result<Vec<Modality>> {
        let mut mods = if self.modalities.is_empty() {
            dataset
                .recordings
                .first()
                .ok_or_else(|| Error::config("dataset has no recordings"))?
                .features
                .keys()
                .copied()
                .collect()
        } else {
            self.modalities.clone()
        };
        mods.sort();
        mods.dedup();
        if mods.is_empty() {
            return Err(Error::config("no input modalities selected"));
        }
        Ok(mods)
    }

    /// Width of the model input this configuration produces on `dataset`.
    pub fn input_dim(&self, dataset: &Dataset) -> Result<usize> {
        let first = dataset
            .recordings
            .first()
            .ok_or_else(|| Error::config("dataset has no recordings"))?;
        let mut d = 0;
        for m in self.resolved_modalities(dataset)? {
            d += first
                .features
                .get(&m)
                .ok_or_else(|| Error::config(format!("dataset lacks modality {}", m.name())))?
                .dim();
        }
        Ok(d + usize::from(self.segment_channel))
    }
}

// ---------------------------------------------------------------------------
// Fusion of inputs

/// Column-wise concatenation of one recording's modalities in canonical
/// modality order.
pub fn early_fuse(features: &[FeatureSequence]) -> Result<FeatureSequence> {
    let mut parts: Vec<&FeatureSequence> = features.iter().collect();
    parts.sort_by_key(|f| f.modality);
    let first = *parts.first().ok_or_else(|| Error::arg("nothing to fuse"))?;
    if parts.len() == 1 {
        return Ok(first.clone());
    }
    for p in &parts[1..] {
        if p.recording_id != first.recording_id {
            return Err(Error::arg(format!(
                "cannot fuse recordings {} and {}",
                first.recording_id, p.recording_id
            )));
        }
        if p.len() != first.len() {
            return Err(Error::shape(format!(
                "{}: {} has {} steps, {} has {}",
                first.recording_id,
                first.modality.name(),
                first.len(),
                p.modality.name(),
                p.len()
            )));
        }
    }
    let mats: Vec<&Tensor2> = parts.iter().map(|p| &p.matrix).collect();
    let matrix = Tensor2::hcat(&mats)?;
    Ok(FeatureSequence {
        recording_id: first.recording_id.clone(),
        modality: Modality::Custom(matrix.cols()),
        timestamps: first.timestamps.clone(),
        segment_ids: first.segment_ids.clone(),
        matrix,
    })
}

// ---------------------------------------------------------------------------
// Training

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_ccc: f64,
    pub lr: f64,
}

/// Stitched per-step predictions of one recording, one vector per output.
pub type Predictions = BTreeMap<String, Vec<Vec<f64>>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub dev_ccc: f64,
    pub test_ccc: f64,
    pub dev: MetricReport,
    pub test: MetricReport,
    pub dev_per_recording: BTreeMap<String, f64>,
    pub test_per_recording: BTreeMap<String, f64>,
    pub history: Vec<EpochRecord>,
    pub checkpoint: Checkpoint,
    /// Trust-dimension (and, multitask, arousal / valence) predictions for
    /// every recording of the three partitions.
    #[serde(skip)]
    pub predictions: Predictions,
}

impl TrainResult {
    pub fn train_losses(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.train_loss).collect()
    }
}

/// Writes `epoch,train_loss,dev_ccc,lr`.
pub fn write_log(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "dev_ccc", "lr"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.train_loss.to_string(),
            h.dev_ccc.to_string(),
            h.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, format!("bad field {i} in {rec:?}")))
        };
        out.push(EpochRecord {
            epoch: f(0)? as usize,
            train_loss: f(1)?,
            dev_ccc: f(2)?,
            lr: f(3)?,
        });
    }
    Ok(out)
}

/// Model inputs and targets for every recording a run touches.
struct Prepared {
    ids: Vec<String>,
    inputs: Vec<Tensor2>,
    /// Per recording, one target sequence per output dimension.
    targets: Vec<Vec<Vec<f64>>>,
    index: BTreeMap<String, usize>,
}

impl Prepared {
    fn build(cfg: &TrainConfig, dataset: &Dataset, parts: &Partitions) -> Result<Self> {
        let mods = cfg.resolved_modalities(dataset)?;
        let dims = cfg.dimensions();
        let lookup = |id: &str| -> Result<&LabeledRecording> {
            dataset
                .recording(id)
                .ok_or_else(|| Error::config(format!("partition names unknown recording {id}")))
        };
        let feature = |r: &'_ LabeledRecording, m: Modality| -> Result<FeatureSequence> {
            r.features
                .get(&m)
                .cloned()
                .ok_or_else(|| Error::config(format!("{} lacks modality {}", r.recording_id, m.name())))
        };
        let mut ids: Vec<String> = Vec::new();
        for p in parts.all() {
            for id in &p.recording_ids {
                if !ids.contains(id) {
                    ids.push(id.clone());
                }
            }
        }
        ids.sort();
        let train_recs: Vec<&LabeledRecording> = parts
            .train
            .recording_ids
            .iter()
            .map(|id| lookup(id))
            .collect::<Result<_>>()?;
        let mut scalers = Vec::with_capacity(mods.len());
        for &m in &mods {
            let mats: Vec<Tensor2> = train_recs.iter().map(|r| feature(r, m).map(|f| f.matrix)).collect::<Result<_>>()?;
            scalers.push(Standardizer::fit(mats.iter())?);
        }
        let mut inputs = Vec::with_capacity(ids.len());
        let mut targets = Vec::with_capacity(ids.len());
        for id in &ids {
            let r = lookup(id)?;
            let mut seqs = Vec::with_capacity(mods.len());
            for (&m, s) in mods.iter().zip(&scalers) {
                let f = feature(r, m)?;
                seqs.push(FeatureSequence {
                    matrix: s.apply(&f.matrix)?,
                    ..f
                });
            }
            let fused = early_fuse(&seqs)?.matrix;
            let x = if cfg.segment_channel {
                Tensor2::hcat(&[&fused, &Tensor2::column(&segment_channel(&r.segment_ids))])?
            } else {
                fused
            };
            let mut t = Vec::with_capacity(dims.len());
            for d in &dims {
                let lab = r
                    .labels
                    .get(d)
                    .ok_or_else(|| Error::config(format!("{id} has no {d} labels")))?;
                if lab.len() != x.rows() {
                    return Err(Error::shape(format!(
                        "{id}: {} label steps for {} feature steps",
                        lab.len(),
                        x.rows()
                    )));
                }
                t.push(lab.clone());
            }
            inputs.push(x);
            targets.push(t);
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Prepared {
            ids,
            inputs,
            targets,
            index,
        })
    }

    fn indices(&self, p: &crate::dataio::Partition) -> Vec<usize> {
        p.recording_ids.iter().map(|id| self.index[id]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct WindowRef {
    rec: usize,
    start: usize,
    len: usize,
}

fn gather(prep: &Prepared, windows: &[WindowRef]) -> Tensor2 {
    let len = windows[0].len;
    let cols = prep.inputs[windows[0].rec].cols();
    let mut x = Tensor2::zeros(windows.len() * len, cols);
    for (i, w) in windows.iter().enumerate() {
        let src = &prep.inputs[w.rec];
        let n = len * cols;
        x.data_mut()[i * n..(i + 1) * n].copy_from_slice(&src.data()[w.start * cols..(w.start + len) * cols]);
    }
    x
}

/// Windows grouped by length (ascending), order preserved within a group.
fn by_length(windows: &[WindowRef]) -> Vec<Vec<WindowRef>> {
    let mut groups: BTreeMap<usize, Vec<WindowRef>> = BTreeMap::new();
    for w in windows {
        groups.entry(w.len).or_default().push(*w);
    }
    groups.into_values().collect()
}

/// Stitched predictions for a full `T × D` input, one vector per output.
/// Prediction always uses anchored windows so every step is covered.
pub fn predict_sequence(model: &Model, x: &Tensor2, ws: usize, hs: usize) -> Result<Vec<Vec<f64>>> {
    let spans = window_spans(x.rows(), ws, hs, TailRule::AnchoredTail)?;
    let outs = model.spec().output_dims;
    let mut pieces: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::with_capacity(spans.len()); outs];
    for chunk in spans.chunks(CHUNK_WINDOWS) {
        let len = chunk[0].valid_len;
        debug_assert!(chunk.iter().all(|w| w.valid_len == len));
        let mut xb = Tensor2::zeros(chunk.len() * len, x.cols());
        for (i, w) in chunk.iter().enumerate() {
            let n = len * x.cols();
            xb.data_mut()[i * n..(i + 1) * n].copy_from_slice(&x.data()[w.start * x.cols()..w.end() * x.cols()]);
        }
        let y = model.predict(&xb, len)?;
        for (i, w) in chunk.iter().enumerate() {
            for (k, piece) in pieces.iter_mut().enumerate() {
                let vals = (0..len).map(|t| y[(i * len + t, k)]).collect();
                piece.push((w.start, vals));
            }
        }
    }
    pieces.iter().map(|p| stitch(p, x.rows())).collect()
}

struct Evaluation {
    report: MetricReport,
    per_recording: BTreeMap<String, f64>,
}

fn evaluate(model: &Model, prep: &Prepared, recs: &[usize], cfg: &TrainConfig, preds: &mut Predictions) -> Result<Evaluation> {
    let mut all_p = Vec::new();
    let mut all_l = Vec::new();
    let mut per_recording = BTreeMap::new();
    for &r in recs {
        let id = &prep.ids[r];
        let p = match preds.get(id) {
            Some(p) => p.clone(),
            None => {
                let p = predict_sequence(model, &prep.inputs[r], cfg.ws, cfg.hs)?;
                preds.insert(id.clone(), p.clone());
                p
            }
        };
        let label = &prep.targets[r][0];
        per_recording.insert(id.clone(), ccc(&p[0], label)?);
        all_p.extend_from_slice(&p[0]);
        all_l.extend_from_slice(label);
    }
    Ok(Evaluation {
        report: MetricReport::compute(&all_p, &all_l)?,
        per_recording,
    })
}

/// Trains `spec` on the train partition, selecting the epoch with the best
/// dev CCC (trust dimension), then evaluates that checkpoint on test.
pub fn train(spec: &ModelSpec, cfg: &TrainConfig, dataset: &Dataset, partitions: &Partitions) -> Result<TrainResult> {
    cfg.validate()?;
    for p in partitions.all() {
        if p.recording_ids.is_empty() {
            return Err(Error::config(format!("partition {:?} is empty", p.name)));
        }
    }
    let want_in = cfg.input_dim(dataset)?;
    if spec.input_dim != want_in || spec.output_dims != cfg.output_dims() {
        return Err(Error::config(format!(
            "model spec is {}→{}, data gives {}→{}",
            spec.input_dim,
            spec.output_dims,
            want_in,
            cfg.output_dims()
        )));
    }
    let prep = Prepared::build(cfg, dataset, partitions)?;
    let train_idx = prep.indices(&partitions.train);
    let dev_idx = prep.indices(&partitions.devel);
    let test_idx = prep.indices(&partitions.test);

    let mut windows = Vec::new();
    for &r in &train_idx {
        for w in window_spans(prep.inputs[r].rows(), cfg.ws, cfg.hs, cfg.tail_rule)? {
            windows.push(WindowRef {
                rec: r,
                start: w.start,
                len: w.valid_len,
            });
        }
    }
    if windows.is_empty() {
        return Err(Error::config("training partition yields no windows"));
    }
    let batch = cfg.batch_size.min(windows.len());
    let weights = cfg.weights();

    let mut model = Model::new(spec.clone())?;
    let mut adam = AdamState::new(&model.params());
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for epoch in 1..=cfg.max_epochs {
        windows.shuffle(&mut rng);
        let lr = sched.lr;
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for batch_windows in windows.chunks(batch) {
            model.zero_grad();
            let share = 1.0 / batch_windows.len() as f64;
            let mut batch_loss_acc = 0.0;
            for group in by_length(batch_windows) {
                let len = group[0].len;
                for chunk in group.chunks(CHUNK_WINDOWS) {
                    let x = gather(&prep, chunk);
                    let y = model.forward(&x, len)?;
                    let tgt: Vec<Vec<f64>> = (0..weights.len())
                        .map(|k| {
                            chunk
                                .iter()
                                .flat_map(|w| prep.targets[w.rec][k][w.start..w.start + len].iter().copied())
                                .collect()
                        })
                        .collect();
                    let tref: Vec<&[f64]> = tgt.iter().map(Vec::as_slice).collect();
                    let (l, mut g) = multitask_loss(cfg.loss, &y, &tref, &weights, len)?;
                    let scale = chunk.len() as f64 * share;
                    batch_loss_acc += l * scale;
                    g.scale(scale);
                    model.backward(&g)?;
                }
            }
            let mut params = model.params_mut();
            if let Some(c) = cfg.max_grad_norm {
                clip_grad_norm(&mut params, c);
            }
            adam_step(&mut params, &mut adam, lr)?;
            epoch_loss += batch_loss_acc;
            steps += 1;
        }
        let train_loss = epoch_loss / steps as f64;
        let dev = evaluate(&model, &prep, &dev_idx, cfg, &mut Predictions::new())?;
        let dev_ccc = dev.report.ccc;
        history.push(EpochRecord {
            epoch,
            train_loss,
            dev_ccc,
            lr,
        });
        if best.as_ref().is_none_or(|(_, b, _)| dev_ccc > *b) {
            best = Some((epoch, dev_ccc, model.flat_params()));
        }
        sched.step(dev_ccc);
        if !train_loss.is_finite() {
            return Err(Error::Integrity(format!("training diverged at epoch {epoch}")));
        }
        if let (Some(stop), Some((be, _, _))) = (cfg.early_stop, &best) {
            if epoch - be >= stop {
                break;
            }
        }
    }
    let (best_epoch, best_dev, params) = best.expect("at least one epoch");
    model.set_flat_params(&params)?;
    let mut predictions = Predictions::new();
    let dev = evaluate(&model, &prep, &dev_idx, cfg, &mut predictions)?;
    let test = evaluate(&model, &prep, &test_idx, cfg, &mut predictions)?;
    evaluate(&model, &prep, &train_idx, cfg, &mut predictions)?;
    debug_assert_eq!(dev.report.ccc.to_bits(), best_dev.to_bits());
    Ok(TrainResult {
        best_epoch,
        dev_ccc: dev.report.ccc,
        test_ccc: test.report.ccc,
        dev: dev.report,
        test: test.report,
        dev_per_recording: dev.per_recording,
        test_per_recording: test.per_recording,
        history,
        checkpoint: model.checkpoint(),
        predictions,
    })
}

/// Stitched predictions of a stored checkpoint over a dataset, built the
/// same way training prepared its inputs.
pub fn predict_dataset(ck: &Checkpoint, cfg: &TrainConfig, dataset: &Dataset, partitions: &Partitions) -> Result<Predictions> {
    let model = Model::from_checkpoint(ck)?;
    let prep = Prepared::build(cfg, dataset, partitions)?;
    let mut out = Predictions::new();
    for (id, x) in prep.ids.iter().zip(&prep.inputs) {
        out.insert(id.clone(), predict_sequence(&model, x, cfg.ws, cfg.hs)?);
    }
    Ok(out)
}

/// Second-stage model on stacked unimodal predictions: a unidirectional
/// LSTM of `LATE_FUSION_HIDDEN` units reads, per step, every output of every
/// first-stage model and regresses the labels selected by `cfg`.
pub fn late_fuse(unimodal: &[&Predictions], dataset: &Dataset, partitions: &Partitions, cfg: &TrainConfig) -> Result<TrainResult> {
    late_fuse_with(unimodal, dataset, partitions, cfg, LATE_FUSION_HIDDEN)
}

pub fn late_fuse_with(
    unimodal: &[&Predictions],
    dataset: &Dataset,
    partitions: &Partitions,
    cfg: &TrainConfig,
    hidden: usize,
) -> Result<TrainResult> {
    if unimodal.len() < 2 {
        return Err(Error::arg("late fusion needs at least two first-stage models"));
    }
    let mut recordings = Vec::new();
    let mut width = None;
    for p in partitions.all() {
        for id in &p.recording_ids {
            if recordings.iter().any(|r: &LabeledRecording| &r.recording_id == id) {
                continue;
            }
            let src = dataset
                .recording(id)
                .ok_or_else(|| Error::config(format!("partition names unknown recording {id}")))?;
            let mut cols = Vec::new();
            for preds in unimodal {
                let p = preds
                    .get(id)
                    .ok_or_else(|| Error::arg(format!("no first-stage predictions for {id}")))?;
                for s in p {
                    if s.len() != src.len() {
                        return Err(Error::shape(format!(
                            "{id}: prediction has {} steps, recording {}",
                            s.len(),
                            src.len()
                        )));
                    }
                    cols.push(Tensor2::column(s));
                }
            }
            let refs: Vec<&Tensor2> = cols.iter().collect();
            let matrix = Tensor2::hcat(&refs)?;
            if *width.get_or_insert(matrix.cols()) != matrix.cols() {
                return Err(Error::shape("first-stage models disagree on output width"));
            }
            let modality = Modality::Custom(matrix.cols());
            let seq = FeatureSequence {
                recording_id: id.clone(),
                modality,
                timestamps: (0..src.len()).map(|t| t as f64 * crate::dataio::LABEL_PERIOD_MS).collect(),
                segment_ids: src.segment_ids.clone(),
                matrix,
            };
            recordings.push(LabeledRecording {
                features: BTreeMap::from([(modality, seq)]),
                ..src.clone()
            });
        }
    }
    let k = width.expect("non-empty partitions");
    let fused = Dataset {
        recordings,
        partitions: partitions.clone(),
    };
    let cfg = TrainConfig {
        modalities: vec![Modality::Custom(k)],
        segment_channel: false,
        ..cfg.clone()
    };
    let spec = ModelSpec {
        input_dim: k,
        model_dim: None,
        heads: 1,
        mhal_layers: 0,
        lstm_layers: 1,
        bidirectional: false,
        lstm_hidden: hidden,
        output_dims: cfg.output_dims(),
        residual: false,
        seed: cfg.seed,
    };
    train(&spec, &cfg, &fused, partitions)
}

/// Convenience: the recordings of one partition's stitched trust predictions
/// concatenated in id order, with matching labels.
pub fn concatenated(preds: &Predictions, dataset: &Dataset, name: PartitionName) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut p = Vec::new();
    let mut l = Vec::new();
    for r in dataset.partition(name) {
        let pr = preds
            .get(&r.recording_id)
            .ok_or_else(|| Error::arg(format!("no predictions for {}", r.recording_id)))?;
        p.extend_from_slice(&pr[0]);
        l.extend_from_slice(
            r.labels
                .get(&Dimension::Trustworthiness)
                .ok_or_else(|| Error::arg(format!("{} has no trust labels", r.recording_id)))?,
        );
    }
    Ok((p, l))
}
