//! Agreement and error metrics between equal-length real sequences.
//!
//! Moments are population moments (divide by `n`). When a denominator is
//! numerically zero (both sequences constant) the correlation is reported as
//! `0.0` and [`MetricReport::degenerate`] is set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominators at or below this value count as zero variance.
pub const ZERO_VARIANCE_EPS: f64 = 1e-12;

/// CCC, PCC and RMSE of one prediction/label pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ccc: f64,
    pub pcc: f64,
    pub rmse: f64,
    pub n: usize,
    /// Set when a zero-variance guard fired for `ccc` or `pcc`.
    #[serde(default)]
    pub degenerate: bool,
}

impl MetricReport {
    pub fn compute(pred: &[f64], label: &[f64]) -> Result<Self> {
        let m = Moments::of(pred, label)?;
        let (ccc, ccc_deg) = m.ccc();
        let (pcc, pcc_deg) = m.pcc();
        Ok(MetricReport {
            ccc,
            pcc,
            rmse: rmse(pred, label)?,
            n: pred.len(),
            degenerate: ccc_deg || pcc_deg,
        })
    }
}

/// Population first and second moments of a pair of sequences.
#[derive(Debug, Clone, Copy)]
struct Moments {
    mean_a: f64,
    mean_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

impl Moments {
    fn of(a: &[f64], b: &[f64]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::arg(format!(
                "sequence lengths differ: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        if a.len() < 2 {
            return Err(Error::arg("correlation needs at least 2 samples"));
        }
        let n = a.len() as f64;
        let mean_a = a.iter().sum::<f64>() / n;
        let mean_b = b.iter().sum::<f64>() / n;
        let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            let (da, db) = (x - mean_a, y - mean_b);
            var_a += da * da;
            var_b += db * db;
            cov += da * db;
        }
        Ok(Moments {
            mean_a,
            mean_b,
            var_a: var_a / n,
            var_b: var_b / n,
            cov: cov / n,
        })
    }

    fn ccc(&self) -> (f64, bool) {
        let d = self.mean_a - self.mean_b;
        let denom = self.var_a + self.var_b + d * d;
        if denom <= ZERO_VARIANCE_EPS {
            return (0.0, true);
        }
        ((2.0 * self.cov / denom).clamp(-1.0, 1.0), false)
    }

    fn pcc(&self) -> (f64, bool) {
        let denom = (self.var_a * self.var_b).sqrt();
        if denom <= ZERO_VARIANCE_EPS {
            return (0.0, true);
        }
        ((self.cov / denom).clamp(-1.0, 1.0), false)
    }
}

/// Concordance correlation coefficient:
/// `2·cov(a,b) / (var(a) + var(b) + (mean(a) − mean(b))²)`.
pub fn ccc(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(Moments::of(a, b)?.ccc().0)
}

/// Pearson correlation coefficient.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(Moments::of(a, b)?.pcc().0)
}

/// Root mean squared error.
pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "sequence lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::arg("rmse of empty sequences"));
    }
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq / a.len() as f64).sqrt())
}

/// Mean one-vs-rest CCC: each trace against the pointwise mean of the others.
pub fn inter_rater_agreement<S: AsRef<[f64]>>(traces: &[S]) -> Result<f64> {
    let scores = one_vs_rest_ccc(traces)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// `ccc(trace_k, mean of the other traces)` for every `k`, in input order.
pub fn one_vs_rest_ccc<S: AsRef<[f64]>>(traces: &[S]) -> Result<Vec<f64>> {
    if traces.len() < 2 {
        return Err(Error::arg("agreement needs at least 2 traces"));
    }
    let len = traces[0].as_ref().len();
    if traces.iter().any(|t| t.as_ref().len() != len) {
        return Err(Error::arg("traces differ in length"));
    }
    let mut total = vec![0.0; len];
    for t in traces {
        for (acc, v) in total.iter_mut().zip(t.as_ref()) {
            *acc += v;
        }
    }
    let others = (traces.len() - 1) as f64;
    traces
        .iter()
        .map(|t| {
            let t = t.as_ref();
            let rest: Vec<f64> = total
                .iter()
                .zip(t)
                .map(|(sum, v)| (sum - v) / others)
                .collect();
            ccc(t, &rest)
        })
        .collect()
}

/// Partition-level evaluation: one report over the concatenation of all
/// recordings, plus a per-recording CCC for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub global: MetricReport,
    pub per_recording_ccc: Vec<f64>,
}

impl PartitionReport {
    pub fn compute<P: AsRef<[f64]>, L: AsRef<[f64]>>(preds: &[P], labels: &[L]) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::arg("prediction and label recording counts differ"));
        }
        let mut all_p = Vec::new();
        let mut all_l = Vec::new();
        let mut per = Vec::with_capacity(preds.len());
        for (p, l) in preds.iter().zip(labels) {
            let (p, l) = (p.as_ref(), l.as_ref());
            per.push(if p.len() >= 2 { ccc(p, l)? } else { 0.0 });
            all_p.extend_from_slice(p);
            all_l.extend_from_slice(l);
        }
        Ok(PartitionReport {
            global: MetricReport::compute(&all_p, &all_l)?,
            per_recording_ccc: per,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ccc_examples() {
        let a = [0.1, 0.5, -0.2, 0.9];
        assert_eq!(ccc(&a, &a).unwrap(), 1.0);
        let v = ccc(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((v - 2.5 / 3.5).abs() < 1e-15);
        // equal means and variances, perfectly anti-correlated
        let v = ccc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((v + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pcc_examples() {
        assert!((pcc(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pcc(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 5.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[1.0], &[-1.0]).unwrap(), 2.0);
    }

    #[test]
    fn length_mismatch_is_argument_error() {
        assert!(matches!(ccc(&[1.0, 2.0], &[1.0]), Err(Error::Argument(_))));
        assert!(matches!(pcc(&[1.0, 2.0], &[1.0]), Err(Error::Argument(_))));
        assert!(matches!(rmse(&[1.0, 2.0], &[1.0]), Err(Error::Argument(_))));
        assert!(matches!(ccc(&[1.0], &[1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn constant_equal_sequences_are_degenerate_zero() {
        let c = [0.3; 5];
        assert_eq!(ccc(&c, &c).unwrap(), 0.0);
        assert_eq!(pcc(&c, &c).unwrap(), 0.0);
        let r = MetricReport::compute(&c, &c).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.rmse, 0.0);
    }

    #[test]
    fn agreement_examples() {
        let t = vec![0.1, 0.4, -0.3, 0.8, 0.2];
        let three = [t.clone(), t.clone(), t.clone()];
        assert!((inter_rater_agreement(&three).unwrap() - 1.0).abs() < 1e-15);
        let a = [1.0, 3.0, 2.0, 5.0];
        let b = [2.0, 2.5, 2.0, 4.0];
        let two = inter_rater_agreement(&[a.to_vec(), b.to_vec()]).unwrap();
        assert!((two - ccc(&a, &b).unwrap()).abs() < 1e-15);
        assert!(inter_rater_agreement(&[a.to_vec()]).is_err());
    }

    #[test]
    fn partition_report_concatenates() {
        let p = vec![vec![1.0, 2.0, 3.0], vec![0.0, 1.0]];
        let l = vec![vec![1.0, 2.0, 3.5], vec![0.5, 1.0]];
        let r = PartitionReport::compute(&p, &l).unwrap();
        let cat_p = [1.0, 2.0, 3.0, 0.0, 1.0];
        let cat_l = [1.0, 2.0, 3.5, 0.5, 1.0];
        assert_eq!(r.global.ccc, ccc(&cat_p, &cat_l).unwrap());
        assert_eq!(r.per_recording_ccc.len(), 2);
    }
}
