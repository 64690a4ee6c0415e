//! Gold-standard fusion of per-rater continuous annotation traces with the
//! Evaluator Weighted Estimator (EWE), plus rater quality tracking.
//!
//! Each rater's reliability is the Pearson correlation of their trace with the
//! mean trace. Negative reliabilities are clamped to zero, the rest are
//! normalised to sum to one, and the gold standard is the reliability-weighted
//! mean of the traces.
//!
//! All sums run over the traces sorted by `rater_id`, so fusion results are
//! bitwise independent of the order the traces were supplied in.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;

/// Raw joystick range of the annotation device.
pub const RAW_RANGE: (f64, f64) = (-1000.0, 1000.0);
/// Range used throughout the modelling pipeline.
pub const NORMALIZED_RANGE: (f64, f64) = (-1.0, 1.0);

/// Annotated affect dimension.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Trustworthiness,
    Arousal,
    Valence,
}

impl Dimension {
    /// Order used for multi-task outputs: trustworthiness, arousal, valence.
    pub const ALL: [Dimension; 3] = [
        Dimension::Trustworthiness,
        Dimension::Arousal,
        Dimension::Valence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Trustworthiness => "trustworthiness",
            Dimension::Arousal => "arousal",
            Dimension::Valence => "valence",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trustworthiness" | "trust" => Ok(Dimension::Trustworthiness),
            "arousal" => Ok(Dimension::Arousal),
            "valence" => Ok(Dimension::Valence),
            other => Err(Error::arg(format!("unknown dimension `{other}`"))),
        }
    }
}

/// One rater's time-continuous signal for one dimension of one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorTrace {
    pub rater_id: String,
    pub dimension: Dimension,
    pub recording_id: String,
    /// Label step in milliseconds.
    pub sample_period_ms: f64,
    /// Declared value range, `RAW_RANGE` or `NORMALIZED_RANGE` in practice.
    pub range: (f64, f64),
    pub values: Vec<f64>,
}

impl AnnotatorTrace {
    /// Normalised-range trace with the nominal 250 ms label step.
    pub fn new(
        rater_id: impl Into<String>,
        dimension: Dimension,
        recording_id: impl Into<String>,
        values: Vec<f64>,
    ) -> Self {
        AnnotatorTrace {
            rater_id: rater_id.into(),
            dimension,
            recording_id: recording_id.into(),
            sample_period_ms: 250.0,
            range: NORMALIZED_RANGE,
            values,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::arg(format!(
                "trace of rater `{}` has fewer than 2 samples",
                self.rater_id
            )));
        }
        let (lo, hi) = self.range;
        if let Some(v) = self
            .values
            .iter()
            .find(|v| !v.is_finite() || **v < lo || **v > hi)
        {
            return Err(Error::arg(format!(
                "trace of rater `{}` has value {v} outside [{lo}, {hi}]",
                self.rater_id
            )));
        }
        Ok(())
    }
}

/// Which mean signal the per-rater reliability is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightBase {
    /// Mean over all raters, including the rater being weighted.
    #[default]
    AllRaters,
    /// Mean over the other raters only.
    ExcludeSelf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EweConfig {
    pub weight_base: WeightBase,
}

/// EWE-fused label signal with the reliability weights that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldStandard {
    pub recording_id: String,
    pub dimension: Dimension,
    pub sample_period_ms: f64,
    pub values: Vec<f64>,
    /// Normalised weights, keyed by rater.
    pub weights: BTreeMap<String, f64>,
    /// Raters with nonzero weight.
    pub raters_used: usize,
    /// Every reliability clamped to zero; `values` is the unweighted mean.
    pub fallback_unweighted: bool,
}

/// Fuses traces with the default configuration (mean over all raters).
pub fn ewe_fuse(traces: &[AnnotatorTrace]) -> Result<GoldStandard> {
    ewe_fuse_with(traces, &EweConfig::default())
}

pub fn ewe_fuse_with(traces: &[AnnotatorTrace], config: &EweConfig) -> Result<GoldStandard> {
    let sorted = check_and_sort(traces, true)?;
    let values: Vec<&[f64]> = sorted.iter().map(|t| t.values.as_slice()).collect();

    let reliabilities: Vec<f64> = match config.weight_base {
        WeightBase::AllRaters => {
            let mean = running_mean(&values, None);
            values
                .iter()
                .map(|v| metrics::pcc(v, &mean))
                .collect::<Result<_>>()?
        }
        WeightBase::ExcludeSelf => (0..values.len())
            .map(|k| metrics::pcc(values[k], &running_mean(&values, Some(k))))
            .collect::<Result<_>>()?,
    };

    let clamped: Vec<f64> = reliabilities.iter().map(|r| r.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    let fallback = total <= 0.0;
    let weights: Vec<f64> = if fallback {
        vec![1.0 / values.len() as f64; values.len()]
    } else {
        clamped.iter().map(|r| r / total).collect()
    };

    let fused = weighted_mean(&values, &weights);
    let first = sorted[0];
    Ok(GoldStandard {
        recording_id: first.recording_id.clone(),
        dimension: first.dimension,
        sample_period_ms: first.sample_period_ms,
        values: fused,
        weights: sorted
            .iter()
            .zip(&weights)
            .map(|(t, w)| (t.rater_id.clone(), *w))
            .collect(),
        raters_used: weights.iter().filter(|w| **w > 0.0).count(),
        fallback_unweighted: fallback,
    })
}

/// Each rater's CCC against the mean of the other raters.
pub fn per_rater_quality(traces: &[AnnotatorTrace]) -> Result<BTreeMap<String, f64>> {
    let sorted = check_and_sort(traces, false)?;
    let values: Vec<&[f64]> = sorted.iter().map(|t| t.values.as_slice()).collect();
    let scores = metrics::one_vs_rest_ccc(&values)?;
    Ok(sorted
        .iter()
        .zip(scores)
        .map(|(t, s)| (t.rater_id.clone(), s))
        .collect())
}

/// Mean one-vs-rest CCC over raters.
pub fn inter_rater_agreement(traces: &[AnnotatorTrace]) -> Result<f64> {
    let sorted = check_and_sort(traces, false)?;
    let values: Vec<&[f64]> = sorted.iter().map(|t| t.values.as_slice()).collect();
    metrics::inter_rater_agreement(&values)
}

/// Affine map of a trace from its declared range onto `target`.
pub fn normalize_trace(trace: &AnnotatorTrace, target: (f64, f64)) -> Result<AnnotatorTrace> {
    let (lo, hi) = target;
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::arg(format!("target range [{lo}, {hi}] is empty")));
    }
    let (src_lo, src_hi) = trace.range;
    if src_lo.partial_cmp(&src_hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::arg(format!(
            "source range [{src_lo}, {src_hi}] is degenerate"
        )));
    }
    let scale = (hi - lo) / (src_hi - src_lo);
    Ok(AnnotatorTrace {
        range: target,
        values: trace
            .values
            .iter()
            .map(|v| lo + (v - src_lo) * scale)
            .collect(),
        ..trace.clone()
    })
}

fn check_and_sort(traces: &[AnnotatorTrace], same_meta: bool) -> Result<Vec<&AnnotatorTrace>> {
    if traces.len() < 2 {
        return Err(Error::arg(format!(
            "fusion needs at least 2 traces, got {}",
            traces.len()
        )));
    }
    let first = &traces[0];
    for t in traces {
        t.validate()?;
        if t.values.len() != first.values.len() {
            return Err(Error::arg(format!(
                "trace lengths differ: rater `{}` has {}, rater `{}` has {}",
                first.rater_id,
                first.values.len(),
                t.rater_id,
                t.values.len()
            )));
        }
        if same_meta {
            if t.dimension != first.dimension || t.recording_id != first.recording_id {
                return Err(Error::arg(
                    "traces belong to different recordings or dimensions",
                ));
            }
            if t.sample_period_ms != first.sample_period_ms {
                return Err(Error::arg("traces have different sample periods"));
            }
        }
    }
    let mut sorted: Vec<&AnnotatorTrace> = traces.iter().collect();
    sorted.sort_by(|a, b| a.rater_id.cmp(&b.rater_id));
    if sorted.windows(2).any(|w| w[0].rater_id == w[1].rater_id) {
        return Err(Error::arg("duplicate rater ids"));
    }
    Ok(sorted)
}

/// Pointwise mean, optionally leaving out trace `skip`. Running-mean form so
/// identical inputs reproduce themselves exactly.
fn running_mean(values: &[&[f64]], skip: Option<usize>) -> Vec<f64> {
    let w: Vec<f64> = (0..values.len())
        .map(|k| if Some(k) == skip { 0.0 } else { 1.0 })
        .collect();
    weighted_mean(values, &w)
}

/// `Σ w_k v_k / Σ w_k` per step, accumulated incrementally as
/// `m ← m + (w_k / W_k)(v_k − m)`; stays inside the per-step envelope.
fn weighted_mean(values: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let len = values[0].len();
    let mut out = vec![0.0; len];
    let mut cumulative = 0.0;
    for (v, &w) in values.iter().zip(weights) {
        if w <= 0.0 {
            continue;
        }
        cumulative += w;
        let step = w / cumulative;
        for (m, x) in out.iter_mut().zip(v.iter()) {
            *m += step * (x - *m);
        }
    }
    out
}
