//! Fixed-length overlapping windows over long recordings, and mean-stitching
//! of per-window predictions back onto the full timeline.

use serde::{Deserialize, Serialize};

use crate::dataio::LabeledRecording;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// What happens to steps after the last full window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum TailRule {
    /// Append one window ending exactly at the last step.
    #[default]
    AnchoredTail,
    /// Discard the remainder.
    DropTail,
}

/// One window: `valid_len` real steps starting at `start`. `valid_len < ws`
/// only when the recording itself is shorter than `ws`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub valid_len: usize,
}

impl Window {
    pub fn end(&self) -> usize {
        self.start + self.valid_len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub recording_id: String,
    pub ws: usize,
    pub hs: usize,
    pub tail_rule: TailRule,
    /// Length of the underlying recording.
    pub len: usize,
    pub windows: Vec<Window>,
}

/// A materialised window: `ws` rows, zero-padded past `mask`'s true entries.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSlab {
    pub start: usize,
    pub features: Tensor2,
    pub labels: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Window placement for a sequence of `len` steps.
pub fn window_spans(len: usize, ws: usize, hs: usize, tail_rule: TailRule) -> Result<Vec<Window>> {
    if ws == 0 || hs == 0 || hs > ws {
        return Err(Error::arg(format!(
            "need 1 <= hs <= ws, got ws={ws} hs={hs}"
        )));
    }
    if len == 0 {
        return Err(Error::arg("cannot window an empty sequence"));
    }
    if len < ws {
        return Ok(vec![Window {
            start: 0,
            valid_len: len,
        }]);
    }
    let mut out: Vec<Window> = (0..)
        .map(|i| i * hs)
        .take_while(|s| s + ws <= len)
        .map(|start| Window {
            start,
            valid_len: ws,
        })
        .collect();
    if tail_rule == TailRule::AnchoredTail {
        let last_end = out.last().map_or(0, Window::end);
        if last_end < len {
            let start = len - ws;
            if out.last().map(|w| w.start) != Some(start) {
                out.push(Window {
                    start,
                    valid_len: ws,
                });
            }
        }
    }
    Ok(out)
}

/// Windows a labelled recording.
pub fn segment(
    recording: &LabeledRecording,
    ws: usize,
    hs: usize,
    tail_rule: TailRule,
) -> Result<WindowSet> {
    Ok(WindowSet {
        recording_id: recording.recording_id.clone(),
        ws,
        hs,
        tail_rule,
        len: recording.len(),
        windows: window_spans(recording.len(), ws, hs, tail_rule)?,
    })
}

impl WindowSet {
    /// Cuts `ws`-row slabs out of a `len × D` input and its labels, padding
    /// short windows with zeros.
    pub fn slabs(&self, x: &Tensor2, labels: &[f64]) -> Result<Vec<WindowSlab>> {
        if x.rows() != self.len || labels.len() != self.len {
            return Err(Error::shape(format!(
                "window set covers {} steps, input has {} rows and {} labels",
                self.len,
                x.rows(),
                labels.len()
            )));
        }
        Ok(self
            .windows
            .iter()
            .map(|w| {
                let mut features = Tensor2::zeros(self.ws, x.cols());
                let mut lab = vec![0.0; self.ws];
                let mut mask = vec![false; self.ws];
                for i in 0..w.valid_len {
                    features.row_mut(i).copy_from_slice(x.row(w.start + i));
                    lab[i] = labels[w.start + i];
                    mask[i] = true;
                }
                WindowSlab {
                    start: w.start,
                    features,
                    labels: lab,
                    mask,
                }
            })
            .collect())
    }

    /// Steps not covered by any window.
    pub fn uncovered(&self) -> Vec<usize> {
        let mut covered = vec![false; self.len];
        for w in &self.windows {
            covered[w.start..w.end()].iter_mut().for_each(|c| *c = true);
        }
        (0..self.len).filter(|i| !covered[*i]).collect()
    }
}

/// Averages overlapping window predictions per step. Each prediction holds
/// only the window's valid steps.
pub fn stitch<P: AsRef<[f64]>>(window_predictions: &[(usize, P)], len: usize) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; len];
    let mut count = vec![0usize; len];
    for (start, pred) in window_predictions {
        let pred = pred.as_ref();
        if start + pred.len() > len {
            return Err(Error::Integrity(format!(
                "window at {start} of length {} exceeds sequence length {len}",
                pred.len()
            )));
        }
        for (i, v) in pred.iter().enumerate() {
            let t = start + i;
            count[t] += 1;
            // running mean: equal contributions reproduce themselves exactly
            mean[t] += (v - mean[t]) / count[t] as f64;
        }
    }
    if let Some(t) = count.iter().position(|c| *c == 0) {
        return Err(Error::Integrity(format!("step {t} is not covered by any window")));
    }
    Ok(mean)
}

/// Segment ids min-max scaled to [0, 1] within one recording.
pub fn segment_channel(segment_ids: &[u32]) -> Vec<f64> {
    let (lo, hi) = segment_ids
        .iter()
        .fold((u32::MAX, 0u32), |(lo, hi), s| (lo.min(*s), hi.max(*s)));
    if segment_ids.is_empty() || hi == lo {
        return vec![0.0; segment_ids.len()];
    }
    let span = (hi - lo) as f64;
    segment_ids.iter().map(|s| (s - lo) as f64 / span).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn starts(len: usize, ws: usize, hs: usize, tail: TailRule) -> Vec<usize> {
        window_spans(len, ws, hs, tail)
            .unwrap()
            .iter()
            .map(|w| w.start)
            .collect()
    }

    #[test]
    fn exact_fit_needs_no_tail() {
        let s = starts(1000, 200, 100, TailRule::AnchoredTail);
        assert_eq!(s, (0..9).map(|i| i * 100).collect::<Vec<_>>());
    }

    #[test]
    fn anchored_tail_back_shifts() {
        assert_eq!(starts(1000, 750, 500, TailRule::AnchoredTail), vec![0, 250]);
        assert_eq!(starts(1000, 750, 500, TailRule::DropTail), vec![0]);
    }

    #[test]
    fn short_recording_is_one_padded_window() {
        let w = window_spans(30, 100, 50, TailRule::AnchoredTail).unwrap();
        assert_eq!(w, vec![Window { start: 0, valid_len: 30 }]);
        let set = WindowSet {
            recording_id: "r".into(),
            ws: 100,
            hs: 50,
            tail_rule: TailRule::AnchoredTail,
            len: 30,
            windows: w,
        };
        let x = Tensor2::filled(30, 2, 1.0);
        let slab = &set.slabs(&x, &[0.5; 30]).unwrap()[0];
        assert_eq!(slab.features.rows(), 100);
        assert_eq!(slab.mask.iter().filter(|m| **m).count(), 30);
        assert_eq!(slab.features[(99, 1)], 0.0);
    }

    #[test]
    fn disjoint_windows_cover_once() {
        let w = window_spans(600, 200, 200, TailRule::AnchoredTail).unwrap();
        assert_eq!(w.iter().map(|w| w.valid_len).sum::<usize>(), 600);
    }

    #[test]
    fn invalid_hop_rejected() {
        assert!(window_spans(100, 10, 0, TailRule::AnchoredTail).is_err());
        assert!(window_spans(100, 10, 11, TailRule::AnchoredTail).is_err());
        assert!(window_spans(0, 10, 5, TailRule::AnchoredTail).is_err());
    }

    #[test]
    fn stitch_examples() {
        let out = stitch(&[(0, vec![1.0, 2.0]), (2, vec![3.0, 4.0])], 4).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0]);
        let c = 0.1234567;
        let out = stitch(&[(0, vec![c; 3]), (1, vec![c; 3]), (2, vec![c; 3])], 5).unwrap();
        assert!(out.iter().all(|v| *v == c));
        let out = stitch(&[(0, vec![0.0, 0.2]), (1, vec![0.4, 1.0])], 3).unwrap();
        assert!((out[1] - 0.3).abs() < 1e-15);
        assert!(matches!(stitch(&[(0, vec![1.0])], 2), Err(Error::Integrity(_))));
        assert!(stitch(&[(1, vec![1.0, 1.0])], 2).is_err());
    }

    #[test]
    fn segment_channel_scaling() {
        assert_eq!(segment_channel(&[2, 2, 3, 4]), vec![0.0, 0.0, 0.5, 1.0]);
        assert_eq!(segment_channel(&[7, 7]), vec![0.0, 0.0]);
    }
}
