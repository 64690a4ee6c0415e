//! Config-driven experiment grids: one ablation axis crossed with feature
//! sets, a hyperparameter sub-grid per cell with best-on-dev selection, and
//! seed repetitions. Every run lives in its own directory keyed by a hash of
//! its effective configuration, so re-running a grid only trains what is
//! missing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{make_partitions, synthesize_dataset, Dataset, Modality, SynthSpec};
use crate::error::{Error, Result};
use crate::neural::{ModelSpec, DEFAULT_LSTM_HIDDEN};
use crate::training::{late_fuse_with, read_log, train, write_log, LossKind, Predictions, TrainConfig, TrainResult, LATE_FUSION_HIDDEN};
use crate::windowing::window_spans;

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);

// ---------------------------------------------------------------------------
// Configuration types

fn d_heads() -> usize {
    4
}
fn d_one() -> usize {
    1
}
fn d_true() -> bool {
    true
}
fn d_hidden() -> usize {
    DEFAULT_LSTM_HIDDEN
}

/// Architecture knobs of a run; input and output widths follow from the
/// data and the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOptions {
    #[serde(default)]
    pub model_dim: Option<usize>,
    #[serde(default = "d_heads")]
    pub heads: usize,
    #[serde(default = "d_one")]
    pub mhal_layers: usize,
    #[serde(default = "d_one")]
    pub lstm_layers: usize,
    #[serde(default = "d_true")]
    pub bidirectional: bool,
    #[serde(default = "d_hidden")]
    pub lstm_hidden: usize,
    #[serde(default = "d_true")]
    pub residual: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl ModelOptions {
    pub fn spec(&self, input_dim: usize, output_dims: usize, seed: u64) -> ModelSpec {
        ModelSpec {
            input_dim,
            model_dim: self.model_dim,
            heads: self.heads,
            mhal_layers: self.mhal_layers,
            lstm_layers: self.lstm_layers,
            bidirectional: self.bidirectional,
            lstm_hidden: self.lstm_hidden,
            output_dims,
            residual: self.residual,
            seed,
        }
    }
}

/// Configuration of a single `train` invocation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelOptions,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "mhal")]
    Mhal,
    #[serde(rename = "lstm")]
    Lstm,
    #[serde(rename = "bilstm")]
    BiLstm,
    #[serde(rename = "mhal+lstm")]
    MhalLstm,
    #[serde(rename = "mhal+bilstm")]
    MhalBiLstm,
}

impl Architecture {
    pub fn label(self) -> &'static str {
        match self {
            Architecture::Mhal => "MHAL",
            Architecture::Lstm => "LSTM",
            Architecture::BiLstm => "Bi-LSTM",
            Architecture::MhalLstm => "MHAL+LSTM",
            Architecture::MhalBiLstm => "MHAL+Bi-LSTM",
        }
    }

    fn apply(self, base: &ModelOptions) -> ModelOptions {
        let mhal = base.mhal_layers.max(1);
        let lstm = base.lstm_layers.max(1);
        let (m, l, bi) = match self {
            Architecture::Mhal => (mhal, 0, false),
            Architecture::Lstm => (0, lstm, false),
            Architecture::BiLstm => (0, lstm, true),
            Architecture::MhalLstm => (mhal, lstm, false),
            Architecture::MhalBiLstm => (mhal, lstm, true),
        };
        ModelOptions {
            mhal_layers: m,
            lstm_layers: l,
            bidirectional: bi,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Early,
    Late,
}

/// The varied dimension of a grid and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Axis {
    Features(Vec<Vec<Modality>>),
    Window(Vec<(usize, usize)>),
    Heads(Vec<usize>),
    Loss(Vec<LossKind>),
    Architecture(Vec<Architecture>),
    Fusion(Vec<FusionMode>),
    Multitask(Vec<[f64; 3]>),
}

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Features(_) => "features",
            Axis::Window(_) => "window",
            Axis::Heads(_) => "heads",
            Axis::Loss(_) => "loss",
            Axis::Architecture(_) => "architecture",
            Axis::Fusion(_) => "fusion",
            Axis::Multitask(_) => "multitask",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Axis::Features(v) => v.len(),
            Axis::Window(v) => v.len(),
            Axis::Heads(v) => v.len(),
            Axis::Loss(v) => v.len(),
            Axis::Architecture(v) => v.len(),
            Axis::Fusion(v) => v.len(),
            Axis::Multitask(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> String {
        match self {
            Axis::Features(v) => feature_label(&v[i]),
            Axis::Window(v) => format!("{}/{}", v[i].0, v[i].1),
            Axis::Heads(v) => v[i].to_string(),
            Axis::Loss(v) => v[i].to_string(),
            Axis::Architecture(v) => v[i].label().into(),
            Axis::Fusion(v) => match v[i] {
                FusionMode::Early => "early".into(),
                FusionMode::Late => "late".into(),
            },
            Axis::Multitask(v) => format!("{}/{}/{}", v[i][0], v[i][1], v[i][2]),
        }
    }

    /// The ten (ws, hs) pairs of the window ablation.
    pub fn window_table() -> Axis {
        Axis::Window(vec![
            (750, 750),
            (750, 500),
            (750, 250),
            (200, 200),
            (200, 150),
            (200, 100),
            (200, 50),
            (100, 100),
            (100, 50),
            (100, 25),
        ])
    }
}

pub fn feature_label(mods: &[Modality]) -> String {
    if mods.is_empty() {
        return "all".into();
    }
    mods.iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
}

fn d_hp_heads() -> Vec<usize> {
    vec![2, 4, 8]
}
fn d_hp_lr() -> Vec<f64> {
    vec![0.0001, 0.001, 0.005]
}
fn d_hp_batch() -> Vec<usize> {
    vec![512, 1024, 2048]
}

/// Hyperparameters searched inside every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpGrid {
    #[serde(default = "d_hp_heads")]
    pub heads: Vec<usize>,
    #[serde(default = "d_hp_lr")]
    pub lr: Vec<f64>,
    #[serde(default = "d_hp_batch")]
    pub batch_size: Vec<usize>,
}

impl Default for HpGrid {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn d_split() -> (f64, f64, f64) {
    DEFAULT_SPLIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated in memory; partitions drawn with `seed`.
    Synthetic {
        spec: SynthSpec,
        seed: u64,
        #[serde(default = "d_split")]
        split: (f64, f64, f64),
    },
    /// A directory in the dataset layout.
    Dir(PathBuf),
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic { spec, seed, split } => {
                let recordings = synthesize_dataset(spec, *seed)?;
                let partitions = make_partitions(&recordings, *split, *seed)?;
                Ok(Dataset {
                    recordings,
                    partitions,
                })
            }
            DatasetSource::Dir(dir) => Dataset::load(dir),
        }
    }
}

fn d_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub name: String,
    pub dataset: DatasetSource,
    /// Column groups of the table; empty means one group with every modality.
    #[serde(default)]
    pub feature_sets: Vec<Vec<Modality>>,
    pub axis: Axis,
    #[serde(default)]
    pub model: ModelOptions,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub hp: HpGrid,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
}

impl ExperimentGrid {
    pub fn from_json(text: &str) -> Result<Self> {
        let g: ExperimentGrid = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis.is_empty() {
            return Err(Error::config("axis has no values"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("no seeds"));
        }
        let hp = &self.hp;
        if hp.lr.is_empty() || hp.batch_size.is_empty() || (hp.heads.is_empty() && !matches!(self.axis, Axis::Heads(_))) {
            return Err(Error::config("hyperparameter grid has an empty list"));
        }
        if matches!(self.axis, Axis::Features(_)) && !self.feature_sets.is_empty() {
            return Err(Error::config("feature_sets must be empty when the axis is features"));
        }
        if let Axis::Multitask(ws) = &self.axis {
            for w in ws {
                crate::training::validate_task_weights(w)?;
            }
        }
        let unique: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::config("duplicate seeds"));
        }
        self.train.validate()
    }

    fn column_sets(&self) -> Vec<Vec<Modality>> {
        if self.feature_sets.is_empty() {
            vec![Vec::new()]
        } else {
            self.feature_sets.clone()
        }
    }
}

// ---------------------------------------------------------------------------
// Runs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Single,
    /// Second-stage model over the predictions of these runs.
    Late { inputs: Vec<String>, hidden: usize },
}

/// Everything that determines a run's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub kind: RunKind,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub dataset: String,
}

impl RunSpec {
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("serialisable");
        hex::encode(Sha256::digest(bytes))[..16].to_string()
    }
}

/// Number of training windows `cfg` cuts from `dataset`.
pub fn training_windows(cfg: &TrainConfig, dataset: &Dataset) -> Result<usize> {
    let mut n = 0;
    for r in dataset.partition(crate::dataio::PartitionName::Train) {
        n += window_spans(r.len(), cfg.ws, cfg.hs, cfg.tail_rule)?.len();
    }
    Ok(n)
}

/// A single run specification with the batch size clipped and modalities
/// resolved, so equivalent requests share an id.
pub fn single_run(options: &ModelOptions, cfg: &TrainConfig, dataset: &Dataset, fingerprint: &str) -> Result<RunSpec> {
    let mut cfg = cfg.clone();
    cfg.modalities = cfg.resolved_modalities(dataset)?;
    cfg.batch_size = cfg.batch_size.min(training_windows(&cfg, dataset)?.max(1));
    let model = options.spec(cfg.input_dim(dataset)?, cfg.output_dims(), cfg.seed);
    model.validate()?;
    Ok(RunSpec {
        kind: RunKind::Single,
        model,
        train: cfg,
        dataset: fingerprint.to_string(),
    })
}

fn late_run(inputs: Vec<String>, widths: usize, cfg: &TrainConfig, dataset: &Dataset, fingerprint: &str) -> Result<RunSpec> {
    let mut cfg = cfg.clone();
    cfg.modalities = vec![Modality::Custom(widths)];
    cfg.segment_channel = false;
    cfg.batch_size = cfg.batch_size.min(training_windows(&cfg, dataset)?.max(1));
    let model = ModelSpec {
        input_dim: widths,
        model_dim: None,
        heads: 1,
        mhal_layers: 0,
        lstm_layers: 1,
        bidirectional: false,
        lstm_hidden: LATE_FUSION_HIDDEN,
        output_dims: cfg.output_dims(),
        residual: false,
        seed: cfg.seed,
    };
    Ok(RunSpec {
        kind: RunKind::Late {
            inputs,
            hidden: LATE_FUSION_HIDDEN,
        },
        model,
        train: cfg,
        dataset: fingerprint.to_string(),
    })
}

/// Files of one run directory.
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn config(&self) -> PathBuf {
        self.0.join("config.json")
    }
    pub fn log(&self) -> PathBuf {
        self.0.join("log.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.0.join("checkpoint.json")
    }
    pub fn result(&self) -> PathBuf {
        self.0.join("result.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.0.join("predictions.json")
    }
    pub fn error(&self) -> PathBuf {
        self.0.join("error.txt")
    }
}

/// Loads a finished run, or `None` when it has not completed.
pub fn load_run(dir: &Path) -> Result<Option<TrainResult>> {
    let rd = RunDir(dir.to_path_buf());
    if !rd.result().exists() {
        return Ok(None);
    }
    let mut r: TrainResult = serde_json::from_slice(&std::fs::read(rd.result())?)?;
    if rd.predictions().exists() {
        r.predictions = serde_json::from_slice(&std::fs::read(rd.predictions())?)?;
    }
    Ok(Some(r))
}

fn store_run(dir: &Path, spec: &RunSpec, result: &TrainResult) -> Result<()> {
    let rd = RunDir(dir.to_path_buf());
    std::fs::create_dir_all(dir)?;
    std::fs::write(rd.config(), serde_json::to_vec_pretty(spec)?)?;
    write_log(&result.history, &rd.log())?;
    result.checkpoint.save(&rd.checkpoint())?;
    std::fs::write(rd.predictions(), serde_json::to_vec(&result.predictions)?)?;
    // written last: its presence marks the run complete
    std::fs::write(rd.result(), serde_json::to_vec_pretty(result)?)?;
    let _ = std::fs::remove_file(rd.error());
    Ok(())
}

/// Trains a single (non-late) run into `dir`, or loads it if already done.
pub fn execute_single(spec: &RunSpec, dataset: &Dataset, dir: &Path) -> Result<TrainResult> {
    if let Some(r) = load_run(dir)? {
        return Ok(r);
    }
    let r = train(&spec.model, &spec.train, dataset, &dataset.partitions)?;
    store_run(dir, spec, &r)?;
    Ok(r)
}

fn execute(spec: &RunSpec, dataset: &Dataset, runs: &Path, done: &BTreeMap<String, TrainResult>) -> Result<TrainResult> {
    let dir = runs.join(spec.id());
    if let Some(r) = load_run(&dir)? {
        return Ok(r);
    }
    let outcome = match &spec.kind {
        RunKind::Single => train(&spec.model, &spec.train, dataset, &dataset.partitions),
        RunKind::Late { inputs, hidden } => {
            let preds: Vec<&Predictions> = inputs
                .iter()
                .map(|id| {
                    done.get(id)
                        .map(|r| &r.predictions)
                        .ok_or_else(|| Error::Integrity(format!("first-stage run {id} did not finish")))
                })
                .collect::<Result<_>>()?;
            late_fuse_with(&preds, dataset, &dataset.partitions, &spec.train, *hidden)
        }
    };
    match outcome {
        Ok(r) => {
            store_run(&dir, spec, &r)?;
            Ok(r)
        }
        Err(e) => {
            std::fs::create_dir_all(&dir)?;
            std::fs::write(RunDir(dir.clone()).config(), serde_json::to_vec_pretty(spec)?)?;
            std::fs::write(RunDir(dir).error(), e.to_string())?;
            Err(e)
        }
    }
}

// ---------------------------------------------------------------------------
// Grid planning

/// One hyperparameter setting of a cell, repeated over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub runs: Vec<String>,
}

#[derive(Debug, Clone)]
enum CellPlan {
    Direct(Vec<(String, Vec<RunSpec>)>),
    /// Unimodal sub-cells, then late runs built from their winners.
    Late {
        unimodal: Vec<Vec<(String, Vec<RunSpec>)>>,
        lrs: Vec<f64>,
        cfg: TrainConfig,
    },
    Invalid(String),
}

/// Outcome and provenance of one table cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub axis_value: String,
    pub feature_set: String,
    pub status: CellStatus,
    /// Chosen hyperparameters.
    pub chosen: Option<String>,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok { dev: f64, test: f64 },
    Failed { error: String },
}

struct Planner<'a> {
    grid: &'a ExperimentGrid,
    dataset: &'a Dataset,
    fingerprint: String,
}

impl Planner<'_> {
    fn hp_candidates(&self, options: &ModelOptions, cfg: &TrainConfig, fix_heads: bool) -> Result<Vec<(String, Vec<RunSpec>)>> {
        let hp = &self.grid.hp;
        let heads: Vec<Option<usize>> = if fix_heads || options.mhal_layers == 0 {
            vec![None]
        } else {
            hp.heads.iter().map(|h| Some(*h)).collect()
        };
        let mut out: Vec<(String, Vec<RunSpec>)> = Vec::new();
        for h in &heads {
            for &lr in &hp.lr {
                for &b in &hp.batch_size {
                    let mut o = options.clone();
                    if let Some(h) = h {
                        o.heads = *h;
                    }
                    let mut runs = Vec::new();
                    for &seed in &self.grid.seeds {
                        let c = TrainConfig {
                            lr,
                            batch_size: b,
                            seed,
                            ..cfg.clone()
                        };
                        runs.push(single_run(&o, &c, self.dataset, &self.fingerprint)?);
                    }
                    let eff_b = runs[0].train.batch_size;
                    let label = match h {
                        Some(h) => format!("h={h} lr={lr} batch={eff_b}"),
                        None => format!("lr={lr} batch={eff_b}"),
                    };
                    // clipped batch sizes collapse onto one candidate
                    if !out.iter().any(|(l, _)| *l == label) {
                        out.push((label, runs));
                    }
                }
            }
        }
        Ok(out)
    }

    fn plan(&self, fs: &[Modality], vi: usize) -> CellPlan {
        match self.plan_inner(fs, vi) {
            Ok(p) => p,
            Err(e) => CellPlan::Invalid(e.to_string()),
        }
    }

    fn plan_inner(&self, fs: &[Modality], vi: usize) -> Result<CellPlan> {
        let g = self.grid;
        let mut options = g.model.clone();
        let mut cfg = TrainConfig {
            modalities: fs.to_vec(),
            ..g.train.clone()
        };
        let mut fix_heads = false;
        match &g.axis {
            Axis::Features(v) => cfg.modalities = v[vi].clone(),
            Axis::Window(v) => {
                cfg.ws = v[vi].0;
                cfg.hs = v[vi].1;
            }
            Axis::Heads(v) => {
                options.heads = v[vi];
                fix_heads = true;
            }
            Axis::Loss(v) => cfg.loss = v[vi],
            Axis::Architecture(v) => options = v[vi].apply(&options),
            Axis::Multitask(v) => cfg.task_weights = Some(v[vi].to_vec()),
            Axis::Fusion(v) => {
                if v[vi] == FusionMode::Late {
                    let mods = cfg.resolved_modalities(self.dataset)?;
                    if mods.len() < 2 {
                        return Ok(CellPlan::Invalid("late fusion needs at least two modalities".into()));
                    }
                    let mut unimodal = Vec::new();
                    for m in mods {
                        let c = TrainConfig {
                            modalities: vec![m],
                            ..cfg.clone()
                        };
                        unimodal.push(self.hp_candidates(&options, &c, false)?);
                    }
                    return Ok(CellPlan::Late {
                        unimodal,
                        lrs: g.hp.lr.clone(),
                        cfg,
                    });
                }
            }
        }
        Ok(CellPlan::Direct(self.hp_candidates(&options, &cfg, fix_heads)?))
    }
}

/// Mean dev / test over a candidate's seeds, or the first failure.
fn score(runs: &[String], done: &BTreeMap<String, std::result::Result<TrainResult, String>>) -> std::result::Result<(f64, f64), String> {
    let mut dev = 0.0;
    let mut test = 0.0;
    for id in runs {
        match done.get(id) {
            Some(Ok(r)) => {
                dev += r.dev_ccc;
                test += r.test_ccc;
            }
            Some(Err(e)) => return Err(format!("run {id}: {e}")),
            None => return Err(format!("run {id} missing")),
        }
    }
    let n = runs.len() as f64;
    Ok((dev / n, test / n))
}

/// Best candidate by mean dev CCC; ties keep the earlier candidate.
fn select(cands: &[Candidate], done: &BTreeMap<String, std::result::Result<TrainResult, String>>) -> std::result::Result<(usize, f64, f64), String> {
    let mut best: Option<(usize, f64, f64)> = None;
    let mut last_err = String::from("no candidates");
    for (i, c) in cands.iter().enumerate() {
        match score(&c.runs, done) {
            Ok((d, t)) => {
                if best.is_none_or(|(_, bd, _)| d > bd) {
                    best = Some((i, d, t));
                }
            }
            Err(e) => last_err = e,
        }
    }
    best.ok_or(last_err)
}

type Done = BTreeMap<String, std::result::Result<TrainResult, String>>;

fn run_all(specs: Vec<RunSpec>, dataset: &Dataset, runs_dir: &Path, jobs: usize, done: &mut Done) -> Result<()> {
    let mut unique: BTreeMap<String, RunSpec> = BTreeMap::new();
    for s in specs {
        let id = s.id();
        if !done.contains_key(&id) {
            unique.insert(id, s);
        }
    }
    let ok: BTreeMap<String, TrainResult> = done
        .iter()
        .filter_map(|(k, v)| v.as_ref().ok().map(|r| (k.clone(), r.clone())))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(e.to_string()))?;
    let results: Vec<(String, std::result::Result<TrainResult, String>)> = pool.install(|| {
        unique
            .into_par_iter()
            .map(|(id, s)| {
                let r = execute(&s, dataset, runs_dir, &ok).map_err(|e| e.to_string());
                (id, r)
            })
            .collect()
    });
    done.extend(results);
    Ok(())
}

/// Everything `run_grid` produces.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub table: ResultsTable,
    pub cells: Vec<CellRecord>,
}

/// Trains every cell of `grid` under `out/runs/`, resuming completed runs,
/// and writes `table.csv`, `table.md` and `cells.json` to `out`.
pub fn run_grid(grid: &ExperimentGrid, out: &Path, jobs: usize) -> Result<GridOutcome> {
    grid.validate()?;
    let dataset = grid.dataset.load()?;
    dataset.validate()?;
    run_grid_on(grid, &dataset, out, jobs)
}

/// As [`run_grid`] with an already loaded dataset.
pub fn run_grid_on(grid: &ExperimentGrid, dataset: &Dataset, out: &Path, jobs: usize) -> Result<GridOutcome> {
    grid.validate()?;
    let runs_dir = out.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    std::fs::write(out.join("grid.json"), serde_json::to_vec_pretty(grid)?)?;
    let planner = Planner {
        grid,
        dataset,
        fingerprint: dataset.fingerprint(),
    };
    let columns = grid.column_sets();
    let mut plans = Vec::new();
    for fs in &columns {
        for vi in 0..grid.axis.len() {
            plans.push((fs.clone(), vi, planner.plan(fs, vi)));
        }
    }

    // first stage: every single run
    let mut singles = Vec::new();
    for (_, _, p) in &plans {
        match p {
            CellPlan::Direct(c) => singles.extend(c.iter().flat_map(|(_, r)| r.iter().cloned())),
            CellPlan::Late { unimodal, .. } => {
                for sub in unimodal {
                    singles.extend(sub.iter().flat_map(|(_, r)| r.iter().cloned()));
                }
            }
            CellPlan::Invalid(_) => {}
        }
    }
    let mut done = Done::new();
    run_all(singles, dataset, &runs_dir, jobs, &mut done)?;

    // second stage: late fusion over the unimodal winners
    let mut late_cands: BTreeMap<usize, std::result::Result<Vec<Candidate>, String>> = BTreeMap::new();
    let mut late_specs = Vec::new();
    for (pi, (_, _, p)) in plans.iter().enumerate() {
        if let CellPlan::Late { unimodal, lrs, cfg } = p {
            let mut winners: Vec<Vec<String>> = Vec::new();
            let mut widths = 0;
            let mut failure = None;
            for sub in unimodal {
                let cands: Vec<Candidate> = sub
                    .iter()
                    .map(|(l, r)| Candidate {
                        label: l.clone(),
                        runs: r.iter().map(RunSpec::id).collect(),
                    })
                    .collect();
                match select(&cands, &done) {
                    Ok((i, _, _)) => {
                        winners.push(cands[i].runs.clone());
                        widths += sub[i].1[0].model.output_dims;
                    }
                    Err(e) => failure = Some(e),
                }
            }
            if let Some(e) = failure {
                late_cands.insert(pi, Err(e));
                continue;
            }
            let mut cands = Vec::new();
            for &lr in lrs {
                let mut ids = Vec::new();
                for (si, &seed) in grid.seeds.iter().enumerate() {
                    let inputs = winners.iter().map(|w| w[si].clone()).collect();
                    let c = TrainConfig { lr, seed, ..cfg.clone() };
                    let spec = late_run(inputs, widths, &c, dataset, &planner.fingerprint)?;
                    ids.push(spec.id());
                    late_specs.push(spec);
                }
                cands.push(Candidate {
                    label: format!("late lr={lr}"),
                    runs: ids,
                });
            }
            late_cands.insert(pi, Ok(cands));
        }
    }
    run_all(late_specs, dataset, &runs_dir, jobs, &mut done)?;

    // aggregate
    let mut cells = Vec::new();
    for (pi, (fs, vi, p)) in plans.iter().enumerate() {
        let candidates: std::result::Result<Vec<Candidate>, String> = match p {
            CellPlan::Direct(c) => Ok(c
                .iter()
                .map(|(l, r)| Candidate {
                    label: l.clone(),
                    runs: r.iter().map(RunSpec::id).collect(),
                })
                .collect()),
            CellPlan::Late { .. } => late_cands.remove(&pi).expect("planned"),
            CellPlan::Invalid(e) => Err(e.clone()),
        };
        let (status, chosen, candidates) = match candidates {
            Ok(c) => match select(&c, &done) {
                Ok((i, dev, test)) => (CellStatus::Ok { dev, test }, Some(c[i].label.clone()), c),
                Err(e) => (CellStatus::Failed { error: e }, None, c),
            },
            Err(e) => (CellStatus::Failed { error: e }, None, Vec::new()),
        };
        cells.push(CellRecord {
            axis_value: grid.axis.label(*vi),
            feature_set: match &grid.axis {
                Axis::Features(_) => "ccc".into(),
                _ => feature_label(fs),
            },
            status,
            chosen,
            candidates,
        });
    }
    let table = ResultsTable::from_cells(&grid.name, grid.axis.name(), &cells);
    table.save_csv(&out.join("table.csv"))?;
    std::fs::write(out.join("table.md"), table.to_markdown())?;
    std::fs::write(out.join("cells.json"), serde_json::to_vec_pretty(&cells)?)?;
    Ok(GridOutcome { table, cells })
}

// ---------------------------------------------------------------------------
// Tables

/// Dev / test CCC of one cell; `None` marks a failed cell.
pub type Cell = Option<(f64, f64)>;

/// Rows are axis values, column groups are feature sets, each with a dev and
/// a test column. Means are always recomputed from the cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    pub name: String,
    pub axis: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// `cells[row][column]`.
    pub cells: Vec<Vec<Cell>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    axis: String,
    axis_value: String,
    feature_set: String,
    status: String,
    dev_ccc: Option<f64>,
    test_ccc: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl ResultsTable {
    pub fn from_cells(name: &str, axis: &str, cells: &[CellRecord]) -> Self {
        let mut rows: Vec<String> = Vec::new();
        let mut columns: Vec<String> = Vec::new();
        for c in cells {
            if !rows.contains(&c.axis_value) {
                rows.push(c.axis_value.clone());
            }
            if !columns.contains(&c.feature_set) {
                columns.push(c.feature_set.clone());
            }
        }
        let mut grid = vec![vec![None; columns.len()]; rows.len()];
        for c in cells {
            let r = rows.iter().position(|x| *x == c.axis_value).expect("indexed");
            let k = columns.iter().position(|x| *x == c.feature_set).expect("indexed");
            if let CellStatus::Ok { dev, test } = c.status {
                grid[r][k] = Some((dev, test));
            }
        }
        ResultsTable {
            name: name.into(),
            axis: axis.into(),
            rows,
            columns,
            cells: grid,
        }
    }

    /// Mean (dev, test) across the feature sets of one row.
    pub fn row_mean(&self, r: usize) -> (Option<f64>, Option<f64>) {
        let row = &self.cells[r];
        (
            mean(row.iter().flatten().map(|c| c.0)),
            mean(row.iter().flatten().map(|c| c.1)),
        )
    }

    /// Mean (dev, test) down one feature-set column.
    pub fn column_mean(&self, k: usize) -> (Option<f64>, Option<f64>) {
        let col = || self.cells.iter().filter_map(move |r| r[k]);
        (mean(col().map(|c| c.0)), mean(col().map(|c| c.1)))
    }

    /// Row index of the best value in column `k` (`test` selects the test
    /// column). Ties keep the first row.
    pub fn best_row(&self, k: usize, test: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (r, row) in self.cells.iter().enumerate() {
            if let Some(c) = row[k] {
                let v = if test { c.1 } else { c.0 };
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((r, v));
                }
            }
        }
        best.map(|b| b.0)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (r, row) in self.rows.iter().enumerate() {
            for (k, col) in self.columns.iter().enumerate() {
                let c = self.cells[r][k];
                w.serialize(CsvRow {
                    axis: self.axis.clone(),
                    axis_value: row.clone(),
                    feature_set: col.clone(),
                    status: if c.is_some() { "ok" } else { "failed" }.into(),
                    dev_ccc: c.map(|c| c.0),
                    test_ccc: c.map(|c| c.1),
                })?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Integrity(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn from_csv(name: &str, text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut cells = Vec::new();
        let mut axis = String::new();
        for row in r.deserialize() {
            let row: CsvRow = row?;
            axis = row.axis.clone();
            let status = match (row.status.as_str(), row.dev_ccc, row.test_ccc) {
                ("ok", Some(dev), Some(test)) => CellStatus::Ok { dev, test },
                _ => CellStatus::Failed { error: String::new() },
            };
            cells.push(CellRecord {
                axis_value: row.axis_value,
                feature_set: row.feature_set,
                status,
                chosen: None,
                candidates: Vec::new(),
            });
        }
        Ok(Self::from_cells(name, &axis, &cells))
    }

    pub fn load_csv(name: &str, path: &Path) -> Result<Self> {
        Self::from_csv(name, &std::fs::read_to_string(path)?)
    }

    /// Markdown with a dev and test column per feature set, row means in the
    /// trailing `Ø` columns, column means in a final `Ø` row, and the best
    /// value of every column in bold. Failed cells print as `failed`.
    pub fn to_markdown(&self) -> String {
        let fmt = |v: Option<f64>, bold: bool| match v {
            Some(v) if bold => format!("**{v:.4}**"),
            Some(v) => format!("{v:.4}"),
            None => "failed".to_string(),
        };
        let mut s = String::new();
        let _ = writeln!(s, "### {}\n", self.name);
        let mut head = format!("| {} |", self.axis);
        let mut rule = String::from("|---|");
        for c in &self.columns {
            let _ = write!(head, " {c} dev | {c} test |");
            rule.push_str("---:|---:|");
        }
        head.push_str(" Ø dev | Ø test |");
        rule.push_str("---:|---:|");
        let _ = writeln!(s, "{head}\n{rule}");
        let best: Vec<(Option<usize>, Option<usize>)> = (0..self.columns.len())
            .map(|k| (self.best_row(k, false), self.best_row(k, true)))
            .collect();
        for (r, label) in self.rows.iter().enumerate() {
            let mut line = format!("| {label} |");
            for (k, b) in best.iter().enumerate() {
                let c = self.cells[r][k];
                let _ = write!(
                    line,
                    " {} | {} |",
                    fmt(c.map(|c| c.0), b.0 == Some(r)),
                    fmt(c.map(|c| c.1), b.1 == Some(r))
                );
            }
            let (d, t) = self.row_mean(r);
            let _ = write!(line, " {} | {} |", fmt(d, false), fmt(t, false));
            let _ = writeln!(s, "{line}");
        }
        let mut line = String::from("| Ø |");
        for k in 0..self.columns.len() {
            let (d, t) = self.column_mean(k);
            let _ = write!(line, " {} | {} |", fmt(d, false), fmt(t, false));
        }
        let all: Vec<(f64, f64)> = self.cells.iter().flatten().flatten().copied().collect();
        let _ = write!(
            line,
            " {} | {} |",
            fmt(mean(all.iter().map(|c| c.0)), false),
            fmt(mean(all.iter().map(|c| c.1)), false)
        );
        let _ = writeln!(s, "{line}");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::arg(format!("unknown report format {s}"))),
        }
    }
}

/// Regenerates the results table of a grid directory and writes one
/// `curves/<run id>.csv` (`epoch,dev_ccc`) per completed run. Returns the
/// written files.
pub fn report(results_dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let runs_dir = results_dir.join("runs");
    let mut run_dirs: Vec<PathBuf> = match std::fs::read_dir(&runs_dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| RunDir(p.clone()).result().exists())
            .collect(),
        Err(_) => Vec::new(),
    };
    run_dirs.sort();
    if run_dirs.is_empty() {
        return Err(Error::Usage(format!(
            "{} holds no completed runs",
            results_dir.display()
        )));
    }
    let mut written = Vec::new();
    let curves = results_dir.join("curves");
    std::fs::create_dir_all(&curves)?;
    for d in &run_dirs {
        let log = read_log(&RunDir(d.clone()).log())?;
        let name = d.file_name().expect("run dir").to_string_lossy().to_string();
        let path = curves.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["epoch", "dev_ccc"])?;
        for e in log {
            w.write_record([e.epoch.to_string(), e.dev_ccc.to_string()])?;
        }
        w.flush()?;
        written.push(path);
    }
    let cells_path = results_dir.join("cells.json");
    let name = match std::fs::read(results_dir.join("grid.json")) {
        Ok(b) => serde_json::from_slice::<ExperimentGrid>(&b)
            .map(|g| g.name)
            .unwrap_or_else(|_| "results".into()),
        Err(_) => "results".into(),
    };
    let table = if cells_path.exists() {
        let cells: Vec<CellRecord> = serde_json::from_slice(&std::fs::read(&cells_path)?)?;
        let axis = serde_json::from_slice::<ExperimentGrid>(&std::fs::read(results_dir.join("grid.json"))?)
            .map(|g| g.axis.name().to_string())
            .unwrap_or_else(|_| "axis".into());
        ResultsTable::from_cells(&name, &axis, &cells)
    } else {
        // loose runs: one row per run
        let mut cells = Vec::new();
        for d in &run_dirs {
            let r = load_run(d)?.expect("completed");
            cells.push(CellRecord {
                axis_value: d.file_name().expect("run dir").to_string_lossy().to_string(),
                feature_set: "ccc".into(),
                status: CellStatus::Ok {
                    dev: r.dev_ccc,
                    test: r.test_ccc,
                },
                chosen: None,
                candidates: Vec::new(),
            });
        }
        ResultsTable::from_cells(&name, "run", &cells)
    };
    let path = match format {
        ReportFormat::Csv => {
            let p = results_dir.join("table.csv");
            table.save_csv(&p)?;
            p
        }
        ReportFormat::Markdown => {
            let p = results_dir.join("table.md");
            std::fs::write(&p, table.to_markdown())?;
            p
        }
    };
    written.push(path);
    Ok(written)
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

/// The canonical benchmark: 30 recordings of 10 speakers, 600 to 3000 steps,
/// BERT / VGGish / FAU-sized modalities with feature noise 0.3.
pub fn benchmark_spec() -> SynthSpec {
    SynthSpec::new(
        30,
        10,
        (600, 3000),
        vec![Modality::Bert, Modality::Vggish, Modality::Fau],
        0.3,
    )
}

/// Generates `spec` with `seed`, partitions it speaker-independently and
/// writes it to `out` in the dataset directory layout.
pub fn synth_to_dir(spec: &SynthSpec, seed: u64, out: &Path) -> Result<Dataset> {
    let recordings = synthesize_dataset(spec, seed)?;
    let partitions = make_partitions(&recordings, DEFAULT_SPLIT, seed)?;
    let ds = Dataset {
        recordings,
        partitions,
    };
    ds.save(out)?;
    Ok(ds)
}

pub fn synth_benchmark(seed: u64, out: &Path) -> Result<Dataset> {
    synth_to_dir(&benchmark_spec(), seed, out)
}
