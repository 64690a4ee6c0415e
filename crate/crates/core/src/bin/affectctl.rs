//! Command-line front end over the `affect` library.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use affect::annotation_fusion::{ewe_fuse_with, normalize_trace, Dimension, EweConfig, NORMALIZED_RANGE, RAW_RANGE};
use affect::dataio::{load_annotations, save_labels, Dataset, LabelSequence, SynthSpec};
use affect::harness::{
    execute_single, report, run_grid_on, single_run, synth_to_dir, benchmark_spec, ExperimentGrid, DatasetSource,
    ReportFormat, RunConfig,
};
use affect::neural::gradcheck::check_model;
use affect::neural::ModelSpec;
use affect::{Error, Result};

#[derive(Parser)]
#[command(name = "affectctl", about = "Continuous affect regression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for grid runs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (the canonical benchmark unless --config
    /// gives a generator spec).
    Synth(Common),
    /// Fuse raw rater traces (`<data>/<dimension>/<recording>.csv`) into
    /// gold-standard label files under `<out>/labels/`.
    FuseAnnotations(Common),
    /// Train one model.
    Train(Common),
    /// Run an experiment grid.
    Grid(Common),
    /// Rebuild tables and curve files of a grid directory.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "markdown")]
        format: String,
    },
    /// Finite-difference check of the model gradients.
    Gradcheck(Common),
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Usage(format!("--{flag} is required")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn synth(c: &Common) -> Result<()> {
    let out = need(&c.out, "out")?;
    let spec: SynthSpec = match &c.config {
        Some(p) => read_json(p)?,
        None => benchmark_spec(),
    };
    let ds = synth_to_dir(&spec, c.seed.unwrap_or(0), out)?;
    println!(
        "wrote {} recordings to {} (fingerprint {})",
        ds.recordings.len(),
        out.display(),
        ds.fingerprint()
    );
    Ok(())
}

fn fuse(c: &Common) -> Result<()> {
    let data = need(&c.data, "data")?;
    let out = need(&c.out, "out")?;
    let cfg: EweConfig = match &c.config {
        Some(p) => read_json(p)?,
        None => EweConfig::default(),
    };
    let mut summary = serde_json::Map::new();
    for dim in Dimension::ALL {
        let dir = data.join(dim.as_str());
        let Ok(entries) = std::fs::read_dir(&dir) else {
            continue;
        };
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        let target = out.join("labels").join(dim.as_str());
        std::fs::create_dir_all(&target)?;
        for f in files {
            let traces = load_annotations(&f, dim, RAW_RANGE)?
                .iter()
                .map(|t| normalize_trace(t, NORMALIZED_RANGE))
                .collect::<Result<Vec<_>>>()?;
            let gold = ewe_fuse_with(&traces, &cfg)?;
            let labels = LabelSequence {
                timestamps: (0..gold.values.len()).map(|t| t as f64 * gold.sample_period_ms).collect(),
                segment_ids: vec![0; gold.values.len()],
                values: gold.values.clone(),
            };
            save_labels(&labels, &target.join(format!("{}.csv", gold.recording_id)))?;
            println!(
                "{dim} {}: {} raters{}",
                gold.recording_id,
                gold.raters_used,
                if gold.fallback_unweighted { " (unweighted fallback)" } else { "" }
            );
            summary.insert(format!("{dim}/{}", gold.recording_id), serde_json::to_value(&gold.weights)?);
        }
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("weights.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(())
}

fn train_cmd(c: &Common) -> Result<()> {
    let data = need(&c.data, "data")?;
    let out = need(&c.out, "out")?;
    let mut cfg: RunConfig = match &c.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    let dataset = Dataset::load(data)?;
    let spec = single_run(&cfg.model, &cfg.train, &dataset, &dataset.fingerprint())?;
    let dir = out.join(spec.id());
    let r = execute_single(&spec, &dataset, &dir)?;
    println!("run {}", dir.display());
    println!(
        "best epoch {}  dev ccc {:.6}  test ccc {:.6}",
        r.best_epoch, r.dev_ccc, r.test_ccc
    );
    Ok(())
}

fn grid_cmd(c: &Common) -> Result<()> {
    let out = need(&c.out, "out")?;
    let mut grid = ExperimentGrid::load(need(&c.config, "config")?)?;
    if let Some(d) = &c.data {
        grid.dataset = DatasetSource::Dir(d.clone());
    }
    if let Some(s) = c.seed {
        grid.seeds = vec![s];
    }
    let dataset = grid.dataset.load().map_err(|e| Error::Config(format!("cannot resolve dataset: {e}")))?;
    dataset.validate()?;
    let jobs = c
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcome = run_grid_on(&grid, &dataset, out, jobs)?;
    print!("{}", outcome.table.to_markdown());
    let failed = outcome
        .cells
        .iter()
        .filter(|c| matches!(c.status, affect::harness::CellStatus::Failed { .. }))
        .count();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed; see cells.json");
    }
    Ok(())
}

fn gradcheck(c: &Common) -> Result<()> {
    let seed = c.seed.unwrap_or(0);
    let mut worst = 0.0f64;
    for (label, mhal, lstm, bi) in [
        ("mhal", 1, 0, false),
        ("lstm", 0, 1, false),
        ("bilstm", 0, 2, true),
        ("mhal+bilstm", 1, 1, true),
        ("2mhal+2bilstm", 2, 2, true),
    ] {
        let spec = ModelSpec {
            input_dim: 5,
            model_dim: Some(8),
            heads: 2,
            mhal_layers: mhal,
            lstm_layers: lstm,
            bidirectional: bi,
            lstm_hidden: 4,
            output_dims: 3,
            residual: true,
            seed,
        };
        for p in check_model(&spec, 7, 2, 1e-5, seed)? {
            println!("{label:>14} {:<18} {:>4} entries  max rel err {:.2e}", p.name, p.entries, p.max_rel_err);
            worst = worst.max(p.max_rel_err);
        }
    }
    println!("worst relative error {worst:.2e}");
    if worst < 1e-4 {
        Ok(())
    } else {
        Err(Error::Integrity("gradient check failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Synth(c) => synth(c),
        Command::FuseAnnotations(c) => fuse(c),
        Command::Train(c) => train_cmd(c),
        Command::Grid(c) => grid_cmd(c),
        Command::Report { common, format } => format
            .parse::<ReportFormat>()
            .and_then(|f| report(need(&common.out, "out")?, f))
            .map(|files| {
                for f in files {
                    println!("{}", f.display());
                }
            }),
        Command::Gradcheck(c) => gradcheck(c),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
