//! Time-aligned multimodal feature and label data: CSV formats, validation,
//! train-only standardisation, equal-frequency binning, speaker-independent
//! partitioning and a synthetic dataset generator.
//!
//! On-disk layout of a dataset directory:
//!
//! ```text
//! <dir>/manifest.json                         partitions + speaker map
//! <dir>/features/<modality>/<recording>.csv   timestamp,segment_id,f0,...,f{dim-1}
//! <dir>/labels/<dimension>/<recording>.csv    timestamp,segment_id,value
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotation_fusion::{AnnotatorTrace, Dimension, NORMALIZED_RANGE};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Nominal label step.
pub const LABEL_PERIOD_MS: f64 = 250.0;
/// Floor for per-dimension standard deviations during standardisation.
pub const STD_EPS: f64 = 1e-8;

/// Feature set. Variant order fixes the column order of early fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Egemaps,
    Vggish,
    Fau,
    Vggface,
    Fasttext,
    Bert,
    Custom(usize),
}

impl Modality {
    /// Dimensionality convention; `None` when the file header decides.
    pub fn expected_dim(self) -> Option<usize> {
        match self {
            Modality::Egemaps => Some(88),
            Modality::Vggish => Some(128),
            Modality::Fau => Some(17),
            Modality::Fasttext => Some(300),
            Modality::Bert => Some(768),
            Modality::Vggface => None,
            Modality::Custom(d) => Some(d),
        }
    }

    pub fn name(self) -> String {
        match self {
            Modality::Egemaps => "egemaps".into(),
            Modality::Vggish => "vggish".into(),
            Modality::Fau => "fau".into(),
            Modality::Vggface => "vggface".into(),
            Modality::Fasttext => "fasttext".into(),
            Modality::Bert => "bert".into(),
            Modality::Custom(d) => format!("custom{d}"),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        Ok(match s.as_str() {
            "egemaps" => Modality::Egemaps,
            "vggish" => Modality::Vggish,
            "fau" => Modality::Fau,
            "vggface" => Modality::Vggface,
            "fasttext" => Modality::Fasttext,
            "bert" => Modality::Bert,
            other => match other.strip_prefix("custom").map(str::parse::<usize>) {
                Some(Ok(d)) if d > 0 => Modality::Custom(d),
                _ => return Err(Error::arg(format!("unknown modality `{other}`"))),
            },
        })
    }
}

/// A `T × dim` feature matrix of one modality for one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub recording_id: String,
    pub modality: Modality,
    /// Milliseconds, strictly increasing.
    pub timestamps: Vec<f64>,
    pub segment_ids: Vec<u32>,
    pub matrix: Tensor2,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Error::Validation {
            recording: self.recording_id.clone(),
            field: field.into(),
            msg,
        };
        if let Some(d) = self.modality.expected_dim() {
            if d != self.dim() {
                return Err(fail(
                    "dim",
                    format!("{} expects {d} columns, found {}", self.modality, self.dim()),
                ));
            }
        }
        if self.timestamps.len() != self.len() || self.segment_ids.len() != self.len() {
            return Err(fail("timestamps", "row count mismatch".into()));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(fail("timestamps", "not strictly increasing".into()));
        }
        if !self.matrix.is_finite() {
            return Err(fail("matrix", "non-finite value".into()));
        }
        Ok(())
    }
}

/// One recording with all modalities and gold-standard labels on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecording {
    pub recording_id: String,
    pub speaker_id: String,
    pub features: BTreeMap<Modality, FeatureSequence>,
    pub labels: BTreeMap<Dimension, Vec<f64>>,
    pub segment_ids: Vec<u32>,
}

impl LabeledRecording {
    pub fn len(&self) -> usize {
        self.segment_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_ids.is_empty()
    }

    /// Checks every length, dimensionality and monotonicity invariant.
    pub fn validate(&self) -> Result<()> {
        let fail = |field: String, msg: String| Error::Validation {
            recording: self.recording_id.clone(),
            field,
            msg,
        };
        let t = self.len();
        if t == 0 {
            return Err(fail("segment_ids".into(), "empty recording".into()));
        }
        if self.segment_ids.windows(2).any(|w| w[1] < w[0]) {
            return Err(fail("segment_ids".into(), "decreasing segment id".into()));
        }
        for (m, f) in &self.features {
            if f.modality != *m {
                return Err(fail(format!("features.{m}"), "modality key mismatch".into()));
            }
            f.validate().map_err(|e| match e {
                Error::Validation { msg, field, .. } => fail(format!("features.{m}.{field}"), msg),
                other => other,
            })?;
            if f.len() != t {
                return Err(fail(
                    format!("features.{m}"),
                    format!("length {} differs from {t}", f.len()),
                ));
            }
        }
        for (d, l) in &self.labels {
            if l.len() != t {
                return Err(fail(
                    format!("labels.{d}"),
                    format!("length {} differs from {t}", l.len()),
                ));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(fail(format!("labels.{d}"), "non-finite label".into()));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// CSV formats

fn fmt_f64(v: f64) -> String {
    // Display is the shortest representation that parses back to the same bits.
    format!("{v}")
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::format(path, format!("line {line}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::format(path, format!("line {line}: non-finite value")));
    }
    Ok(v)
}

fn parse_u32(path: &Path, line: usize, s: &str) -> Result<u32> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(path, format!("line {line}: bad segment id `{s}`")))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?)
}

fn create_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads a feature CSV. The recording id is the file stem.
pub fn load_features(path: &Path, modality: Modality) -> Result<FeatureSequence> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "timestamp" || &header[1] != "segment_id" {
        return Err(Error::format(
            path,
            "header must start with `timestamp,segment_id`",
        ));
    }
    let dim = header.len() - 2;
    for (i, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::format(path, format!("column {} should be f{i}", i + 2)));
        }
    }
    if let Some(expected) = modality.expected_dim() {
        if expected != dim {
            return Err(Error::format(
                path,
                format!("{modality} expects {expected} value columns, found {dim}"),
            ));
        }
    }
    let mut timestamps = Vec::new();
    let mut segment_ids = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != dim + 2 {
            return Err(Error::format(path, format!("line {line}: wrong column count")));
        }
        let ts = parse_f64(path, line, &rec[0])?;
        if let Some(prev) = timestamps.last() {
            if ts <= *prev {
                return Err(Error::format(
                    path,
                    format!("line {line}: timestamps not increasing"),
                ));
            }
        }
        timestamps.push(ts);
        segment_ids.push(parse_u32(path, line, &rec[1])?);
        for field in rec.iter().skip(2) {
            data.push(parse_f64(path, line, field)?);
        }
    }
    let rows = timestamps.len();
    Ok(FeatureSequence {
        recording_id: stem(path),
        modality,
        timestamps,
        segment_ids,
        matrix: Tensor2::from_vec(rows, dim, data)?,
    })
}

pub fn save_features(seq: &FeatureSequence, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    let mut header = String::from("timestamp,segment_id");
    for i in 0..seq.dim() {
        header.push_str(&format!(",f{i}"));
    }
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for r in 0..seq.len() {
        line.clear();
        line.push_str(&fmt_f64(seq.timestamps[r]));
        line.push(',');
        line.push_str(&seq.segment_ids[r].to_string());
        for v in seq.matrix.row(r) {
            line.push(',');
            line.push_str(&fmt_f64(*v));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// A label CSV: one gold-standard value per step.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSequence {
    pub timestamps: Vec<f64>,
    pub segment_ids: Vec<u32>,
    pub values: Vec<f64>,
}

pub fn load_labels(path: &Path) -> Result<LabelSequence> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["timestamp", "segment_id", "value"] {
        return Err(Error::format(path, "header must be `timestamp,segment_id,value`"));
    }
    let mut out = LabelSequence {
        timestamps: Vec::new(),
        segment_ids: Vec::new(),
        values: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let ts = parse_f64(path, line, &rec[0])?;
        if out.timestamps.last().is_some_and(|p| ts <= *p) {
            return Err(Error::format(path, format!("line {line}: timestamps not increasing")));
        }
        out.timestamps.push(ts);
        out.segment_ids.push(parse_u32(path, line, &rec[1])?);
        out.values.push(parse_f64(path, line, &rec[2])?);
    }
    Ok(out)
}

pub fn save_labels(labels: &LabelSequence, path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    writeln!(w, "timestamp,segment_id,value")?;
    for ((t, s), v) in labels
        .timestamps
        .iter()
        .zip(&labels.segment_ids)
        .zip(&labels.values)
    {
        writeln!(w, "{},{},{}", fmt_f64(*t), s, fmt_f64(*v))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a raw annotation CSV (`timestamp,rater_id,value`, long format) into
/// one trace per rater. Every rater must cover the same timestamps.
pub fn load_annotations(
    path: &Path,
    dimension: Dimension,
    range: (f64, f64),
) -> Result<Vec<AnnotatorTrace>> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["timestamp", "rater_id", "value"] {
        return Err(Error::format(path, "header must be `timestamp,rater_id,value`"));
    }
    let mut per_rater: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let ts = parse_f64(path, line, &rec[0])?;
        let v = parse_f64(path, line, &rec[2])?;
        per_rater.entry(rec[1].to_string()).or_default().push((ts, v));
    }
    let recording_id = stem(path);
    let mut reference: Option<Vec<f64>> = None;
    let mut traces = Vec::with_capacity(per_rater.len());
    for (rater, mut samples) in per_rater {
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
        if ts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::format(path, format!("rater `{rater}` repeats a timestamp")));
        }
        match &reference {
            None => reference = Some(ts.clone()),
            Some(r) if *r != ts => {
                return Err(Error::format(
                    path,
                    format!("rater `{rater}` is sampled on different timestamps"),
                ))
            }
            _ => {}
        }
        let period = if ts.len() >= 2 { ts[1] - ts[0] } else { LABEL_PERIOD_MS };
        traces.push(AnnotatorTrace {
            rater_id: rater,
            dimension,
            recording_id: recording_id.clone(),
            sample_period_ms: period,
            range,
            values: samples.iter().map(|s| s.1).collect(),
        });
    }
    Ok(traces)
}

pub fn save_annotations(traces: &[AnnotatorTrace], path: &Path) -> Result<()> {
    let mut w = create_writer(path)?;
    writeln!(w, "timestamp,rater_id,value")?;
    for t in traces {
        for (i, v) in t.values.iter().enumerate() {
            writeln!(
                w,
                "{},{},{}",
                fmt_f64(i as f64 * t.sample_period_ms),
                t.rater_id,
                fmt_f64(*v)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Nearest-timestamp hold onto `target` timestamps (both sorted ascending).
pub fn resample_nearest(seq: &FeatureSequence, target: &[f64]) -> Result<FeatureSequence> {
    if seq.is_empty() {
        return Err(Error::arg("cannot resample an empty sequence"));
    }
    let mut matrix = Tensor2::zeros(target.len(), seq.dim());
    let mut segment_ids = Vec::with_capacity(target.len());
    let mut j = 0;
    for (r, &t) in target.iter().enumerate() {
        while j + 1 < seq.timestamps.len()
            && (seq.timestamps[j + 1] - t).abs() <= (seq.timestamps[j] - t).abs()
        {
            j += 1;
        }
        matrix.row_mut(r).copy_from_slice(seq.matrix.row(j));
        segment_ids.push(seq.segment_ids[j]);
    }
    Ok(FeatureSequence {
        recording_id: seq.recording_id.clone(),
        modality: seq.modality,
        timestamps: target.to_vec(),
        segment_ids,
        matrix,
    })
}

// ---------------------------------------------------------------------------
// Standardisation

/// Per-dimension z-score statistics fitted on training data only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a, I>(train: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Tensor2>,
    {
        let mats: Vec<&Tensor2> = train.into_iter().collect();
        let dim = mats
            .first()
            .ok_or_else(|| Error::arg("standardisation needs at least one training sequence"))?
            .cols();
        if mats.iter().any(|m| m.cols() != dim) {
            return Err(Error::arg("training sequences differ in dimensionality"));
        }
        let n: usize = mats.iter().map(|m| m.rows()).sum();
        if n == 0 {
            return Err(Error::arg("training sequences are empty"));
        }
        let mut mean = vec![0.0; dim];
        for m in &mats {
            for r in 0..m.rows() {
                for (acc, v) in mean.iter_mut().zip(m.row(r)) {
                    *acc += v;
                }
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; dim];
        for m in &mats {
            for r in 0..m.rows() {
                for ((acc, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
                    *acc += (v - mu) * (v - mu);
                }
            }
        }
        let std = var.into_iter().map(|v| (v / n as f64).sqrt()).collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.cols() != self.mean.len() {
            return Err(Error::arg(format!(
                "standardiser fitted on {} dims, input has {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, mu), sd) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - mu) / sd.max(STD_EPS);
            }
        }
        Ok(out)
    }
}

/// Z-scores `target` with statistics from `train` only.
pub fn standardize(train: &[FeatureSequence], target: &FeatureSequence) -> Result<FeatureSequence> {
    let s = Standardizer::fit(train.iter().map(|f| &f.matrix))?;
    Ok(FeatureSequence {
        matrix: s.apply(&target.matrix)?,
        ..target.clone()
    })
}

// ---------------------------------------------------------------------------
// Three-class binning

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Medium,
    High,
}

/// Equal-frequency binning by rank (stable on ties): the lowest third is
/// `Low`, the middle third `Medium`, the top third `High`.
pub fn bin_three_classes(segment_means: &[f64]) -> Result<Vec<Level>> {
    let n = segment_means.len();
    if n < 3 {
        return Err(Error::arg(format!("binning needs at least 3 values, got {n}")));
    }
    if segment_means.iter().any(|v| v.is_nan()) {
        return Err(Error::arg("cannot bin NaN"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| segment_means[a].total_cmp(&segment_means[b]));
    let mut out = vec![Level::Low; n];
    for (rank, idx) in order.into_iter().enumerate() {
        out[idx] = match rank * 3 / n {
            0 => Level::Low,
            1 => Level::Medium,
            _ => Level::High,
        };
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Partitions

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionName {
    Train,
    Devel,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub name: PartitionName,
    pub recording_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partitions {
    pub train: Partition,
    pub devel: Partition,
    pub test: Partition,
}

impl Partitions {
    pub fn all(&self) -> [&Partition; 3] {
        [&self.train, &self.devel, &self.test]
    }

    pub fn get(&self, name: PartitionName) -> &Partition {
        match name {
            PartitionName::Train => &self.train,
            PartitionName::Devel => &self.devel,
            PartitionName::Test => &self.test,
        }
    }

    /// Fails if a recording or a speaker appears in more than one partition.
    pub fn check_disjoint(&self, speakers: &BTreeMap<String, String>) -> Result<()> {
        let mut rec_owner: BTreeMap<&str, PartitionName> = BTreeMap::new();
        let mut spk_owner: BTreeMap<&str, PartitionName> = BTreeMap::new();
        for p in self.all() {
            for r in &p.recording_ids {
                if rec_owner.insert(r, p.name).is_some() {
                    return Err(Error::Integrity(format!("recording `{r}` in two partitions")));
                }
                let spk = speakers
                    .get(r)
                    .ok_or_else(|| Error::Integrity(format!("recording `{r}` has no speaker")))?;
                if let Some(prev) = spk_owner.insert(spk, p.name) {
                    if prev != p.name {
                        return Err(Error::Integrity(format!(
                            "speaker `{spk}` appears in {prev:?} and {:?}",
                            p.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Speaker-grouped random split with greedy duration balancing.
///
/// Speakers are shuffled with `seed`, sorted by total duration (longest
/// first, shuffle order breaking ties), each partition is seeded with one
/// speaker and the rest go to whichever partition is furthest below its
/// target share of the total duration.
pub fn make_partitions(
    recordings: &[LabeledRecording],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Partitions> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|v| !(*v > 0.0)) || ((r[0] + r[1] + r[2]) - 1.0).abs() > 1e-9 {
        return Err(Error::arg("partition ratios must be positive and sum to 1"));
    }
    let mut by_speaker: BTreeMap<&str, (usize, Vec<&str>)> = BTreeMap::new();
    for rec in recordings {
        let e = by_speaker.entry(&rec.speaker_id).or_default();
        e.0 += rec.len();
        e.1.push(&rec.recording_id);
    }
    if by_speaker.len() < 3 {
        return Err(Error::arg(format!(
            "need at least 3 speakers for 3 partitions, got {}",
            by_speaker.len()
        )));
    }
    let mut speakers: Vec<(&str, usize, Vec<&str>)> = by_speaker
        .into_iter()
        .map(|(s, (d, recs))| (s, d, recs))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    speakers.shuffle(&mut rng);
    speakers.sort_by(|a, b| b.1.cmp(&a.1));

    let total: f64 = speakers.iter().map(|s| s.1 as f64).sum();
    let mut load = [0.0f64; 3];
    let mut sets: [BTreeSet<String>; 3] = Default::default();
    let mut assign = |slot: usize, spk: &(&str, usize, Vec<&str>), load: &mut [f64; 3]| {
        load[slot] += spk.1 as f64;
        sets[slot].extend(spk.2.iter().map(|s| s.to_string()));
    };
    // seed the smallest-target partitions first so each gets a speaker
    let mut seeding: Vec<usize> = vec![0, 1, 2];
    seeding.sort_by(|a, b| r[*b].total_cmp(&r[*a]));
    for (slot, spk) in seeding.into_iter().zip(&speakers) {
        assign(slot, spk, &mut load);
    }
    for spk in speakers.iter().skip(3) {
        let slot = (0..3)
            .max_by(|&a, &b| {
                let da = r[a] * total - load[a];
                let db = r[b] * total - load[b];
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        assign(slot, spk, &mut load);
    }
    let [train, devel, test] = sets;
    Ok(Partitions {
        train: Partition {
            name: PartitionName::Train,
            recording_ids: train,
        },
        devel: Partition {
            name: PartitionName::Devel,
            recording_ids: devel,
        },
        test: Partition {
            name: PartitionName::Test,
            recording_ids: test,
        },
    })
}

/// JSON partition manifest: partition name → recording ids, plus speaker map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionManifest {
    pub partitions: BTreeMap<PartitionName, BTreeSet<String>>,
    pub speakers: BTreeMap<String, String>,
}

impl PartitionManifest {
    pub fn new(partitions: &Partitions, recordings: &[LabeledRecording]) -> Self {
        PartitionManifest {
            partitions: partitions
                .all()
                .iter()
                .map(|p| (p.name, p.recording_ids.clone()))
                .collect(),
            speakers: recordings
                .iter()
                .map(|r| (r.recording_id.clone(), r.speaker_id.clone()))
                .collect(),
        }
    }

    pub fn partitions(&self) -> Result<Partitions> {
        let get = |n: PartitionName| Partition {
            name: n,
            recording_ids: self.partitions.get(&n).cloned().unwrap_or_default(),
        };
        Ok(Partitions {
            train: get(PartitionName::Train),
            devel: get(PartitionName::Devel),
            test: get(PartitionName::Test),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = create_writer(path)?;
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Dataset directories

/// Recordings plus their partitioning.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub recordings: Vec<LabeledRecording>,
    pub partitions: Partitions,
}

impl Dataset {
    pub fn recording(&self, id: &str) -> Option<&LabeledRecording> {
        self.recordings.iter().find(|r| r.recording_id == id)
    }

    /// Recordings of one partition, in id order.
    pub fn partition(&self, name: PartitionName) -> Vec<&LabeledRecording> {
        let ids = &self.partitions.get(name).recording_ids;
        let mut recs: Vec<&LabeledRecording> = self
            .recordings
            .iter()
            .filter(|r| ids.contains(&r.recording_id))
            .collect();
        recs.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
        recs
    }

    pub fn speakers(&self) -> BTreeMap<String, String> {
        self.recordings
            .iter()
            .map(|r| (r.recording_id.clone(), r.speaker_id.clone()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.recordings {
            r.validate()?;
        }
        let known: BTreeSet<&str> = self.recordings.iter().map(|r| r.recording_id.as_str()).collect();
        for p in self.partitions.all() {
            if let Some(missing) = p.recording_ids.iter().find(|r| !known.contains(r.as_str())) {
                return Err(Error::Integrity(format!(
                    "partition {:?} lists unknown recording `{missing}`",
                    p.name
                )));
            }
        }
        self.partitions.check_disjoint(&self.speakers())
    }

    /// Order-independent content hash of the dataset.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        let mut recs: Vec<&LabeledRecording> = self.recordings.iter().collect();
        recs.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
        for r in recs {
            h.update(r.recording_id.as_bytes());
            h.update(r.speaker_id.as_bytes());
            for (m, f) in &r.features {
                h.update(m.name().as_bytes());
                for v in f.matrix.data() {
                    h.update(v.to_le_bytes());
                }
            }
            for (d, l) in &r.labels {
                h.update(d.as_str().as_bytes());
                for v in l {
                    h.update(v.to_le_bytes());
                }
            }
            for s in &r.segment_ids {
                h.update(s.to_le_bytes());
            }
        }
        for p in self.partitions.all() {
            h.update(format!("{:?}", p.name).as_bytes());
            for id in &p.recording_ids {
                h.update(id.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for r in &self.recordings {
            for (m, f) in &r.features {
                save_features(f, &feature_path(dir, *m, &r.recording_id))?;
            }
            let timestamps: Vec<f64> = (0..r.len()).map(|i| i as f64 * LABEL_PERIOD_MS).collect();
            for (d, l) in &r.labels {
                let seq = LabelSequence {
                    timestamps: r
                        .features
                        .values()
                        .next()
                        .map(|f| f.timestamps.clone())
                        .unwrap_or_else(|| timestamps.clone()),
                    segment_ids: r.segment_ids.clone(),
                    values: l.clone(),
                };
                save_labels(&seq, &label_path(dir, *d, &r.recording_id))?;
            }
        }
        PartitionManifest::new(&self.partitions, &self.recordings).save(&dir.join("manifest.json"))
    }

    /// Loads a dataset directory and validates it.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = PartitionManifest::load(&dir.join("manifest.json"))?;
        let mut modalities = Vec::new();
        let feat_root = dir.join("features");
        if feat_root.is_dir() {
            for entry in sorted_entries(&feat_root)? {
                let name = entry.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                modalities.push((name.parse::<Modality>()?, entry));
            }
        }
        let mut dims = Vec::new();
        let label_root = dir.join("labels");
        if label_root.is_dir() {
            for entry in sorted_entries(&label_root)? {
                let name = entry.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                dims.push((name.parse::<Dimension>()?, entry));
            }
        }
        let mut recordings = Vec::with_capacity(manifest.speakers.len());
        for (rec_id, speaker) in &manifest.speakers {
            let mut features = BTreeMap::new();
            let mut segment_ids = None;
            for (m, mdir) in &modalities {
                let path = mdir.join(format!("{rec_id}.csv"));
                if path.exists() {
                    let f = load_features(&path, *m)?;
                    segment_ids.get_or_insert_with(|| f.segment_ids.clone());
                    features.insert(*m, f);
                }
            }
            let mut labels = BTreeMap::new();
            for (d, ddir) in &dims {
                let path = ddir.join(format!("{rec_id}.csv"));
                if path.exists() {
                    let l = load_labels(&path)?;
                    segment_ids.get_or_insert_with(|| l.segment_ids.clone());
                    labels.insert(*d, l.values);
                }
            }
            recordings.push(LabeledRecording {
                recording_id: rec_id.clone(),
                speaker_id: speaker.clone(),
                features,
                labels,
                segment_ids: segment_ids.unwrap_or_default(),
            });
        }
        let ds = Dataset {
            recordings,
            partitions: manifest.partitions()?,
        };
        ds.validate()?;
        Ok(ds)
    }
}

pub fn feature_path(dir: &Path, modality: Modality, recording_id: &str) -> PathBuf {
    dir.join("features")
        .join(modality.name())
        .join(format!("{recording_id}.csv"))
}

pub fn label_path(dir: &Path, dimension: Dimension, recording_id: &str) -> PathBuf {
    dir.join("labels")
        .join(dimension.as_str())
        .join(format!("{recording_id}.csv"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    Ok(v)
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Parameters of the synthetic multimodal generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub recordings: usize,
    pub speakers: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub modalities: Vec<Modality>,
    /// Standard deviation of the additive Gaussian feature noise.
    pub noise: f64,
    /// Sinusoids summed per latent signal.
    #[serde(default = "default_components")]
    pub components: usize,
    /// Shortest latent period in label steps; larger is smoother.
    #[serde(default = "default_min_period")]
    pub min_period: f64,
    /// Steps per topic segment.
    #[serde(default = "default_segment_block")]
    pub segment_block: usize,
}

fn default_components() -> usize {
    4
}
fn default_min_period() -> f64 {
    80.0
}
fn default_segment_block() -> usize {
    100
}

impl SynthSpec {
    pub fn new(recordings: usize, speakers: usize, len: (usize, usize), modalities: Vec<Modality>, noise: f64) -> Self {
        SynthSpec {
            recordings,
            speakers,
            min_len: len.0,
            max_len: len.1,
            modalities,
            noise,
            components: default_components(),
            min_period: default_min_period(),
            segment_block: default_segment_block(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.recordings == 0 || self.speakers == 0 || self.speakers > self.recordings {
            return Err(Error::arg("need 1 <= speakers <= recordings"));
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(Error::arg("need 2 <= min_len <= max_len"));
        }
        if self.modalities.is_empty() {
            return Err(Error::arg("at least one modality required"));
        }
        if self.modalities.iter().any(|m| m.expected_dim().is_none()) {
            return Err(Error::arg("synthetic modalities need a fixed dimensionality"));
        }
        if !(self.noise >= 0.0) || self.components == 0 || !(self.min_period > 2.0) || self.segment_block == 0 {
            return Err(Error::arg("invalid noise, components, min_period or segment_block"));
        }
        Ok(())
    }
}

/// Generates recordings whose features are a fixed random affine image of
/// smooth latent (trustworthiness, arousal, valence) signals plus noise.
pub fn synthesize_dataset(spec: &SynthSpec, seed: u64) -> Result<Vec<LabeledRecording>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per-modality embedding: dim x 3 map and dim offset
    let maps: Vec<(Modality, Tensor2, Vec<f64>)> = spec
        .modalities
        .iter()
        .map(|&m| {
            let dim = m.expected_dim().unwrap_or(0);
            let scale = 1.0 / 3f64.sqrt();
            let a: Vec<f64> = (0..dim * 3)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let b: Vec<f64> = (0..dim)
                .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (m, Tensor2::from_vec(dim, 3, a).expect("sized"), b)
        })
        .collect();

    let mut out = Vec::with_capacity(spec.recordings);
    for idx in 0..spec.recordings {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let latent: Vec<Vec<f64>> = (0..3).map(|_| latent_signal(&mut rng, spec, len)).collect();
        let timestamps: Vec<f64> = (0..len).map(|t| t as f64 * LABEL_PERIOD_MS).collect();
        let segment_ids: Vec<u32> = (0..len).map(|t| (t / spec.segment_block) as u32).collect();
        let recording_id = format!("rec{idx:03}");
        let mut features = BTreeMap::new();
        for (m, a, b) in &maps {
            let dim = b.len();
            let mut matrix = Tensor2::zeros(len, dim);
            for t in 0..len {
                let z = [latent[0][t], latent[1][t], latent[2][t]];
                let row = matrix.row_mut(t);
                for (i, v) in row.iter_mut().enumerate() {
                    let noise: f64 = rng.sample(StandardNormal);
                    *v = a[(i, 0)] * z[0] + a[(i, 1)] * z[1] + a[(i, 2)] * z[2] + b[i] + spec.noise * noise;
                }
            }
            features.insert(
                *m,
                FeatureSequence {
                    recording_id: recording_id.clone(),
                    modality: *m,
                    timestamps: timestamps.clone(),
                    segment_ids: segment_ids.clone(),
                    matrix,
                },
            );
        }
        let labels = Dimension::ALL
            .iter()
            .zip(latent)
            .map(|(d, l)| (*d, l))
            .collect();
        out.push(LabeledRecording {
            recording_id,
            speaker_id: format!("spk{:02}", idx % spec.speakers),
            features,
            labels,
            segment_ids,
        });
    }
    Ok(out)
}

fn latent_signal(rng: &mut ChaCha8Rng, spec: &SynthSpec, len: usize) -> Vec<f64> {
    let offset = rng.random_range(-0.3..0.3);
    let parts: Vec<(f64, f64, f64)> = (0..spec.components)
        .map(|_| {
            let amp = rng.random_range(0.2..0.6) / (spec.components as f64).sqrt();
            let period = rng.random_range(spec.min_period..spec.min_period * 10.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (amp, std::f64::consts::TAU / period, phase)
        })
        .collect();
    let (lo, hi) = NORMALIZED_RANGE;
    (0..len)
        .map(|t| {
            let v: f64 = offset
                + parts
                    .iter()
                    .map(|(a, w, p)| a * (w * t as f64 + p).sin())
                    .sum::<f64>();
            v.clamp(lo, hi)
        })
        .collect()
}
