//! A heads-axis grid over two feature sets, written to a results directory
//! and rendered as a markdown table. Re-running resumes from disk.
//!
//! ```text
//! cargo run --release --example ablation_grid -- [out_dir]
//! ```

use affect::harness::run_grid;
use affect::harness::ExperimentGrid;

const GRID: &str = r#"{
    "name": "heads ablation (synthetic)",
    "dataset": {"synthetic": {"spec": {"recordings": 12, "speakers": 6, "min_len": 300, "max_len": 600,
                                       "modalities": ["vggish", "fau"], "noise": 0.3}, "seed": 1}},
    "feature_sets": [["vggish"], ["fau"]],
    "axis": {"heads": [1, 2, 4, 8]},
    "model": {"model_dim": 16, "lstm_hidden": 16},
    "train": {"max_epochs": 5},
    "hp": {"lr": [0.001, 0.005], "batch_size": [512]}
}"#;

fn main() -> affect::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/ablation_grid".into());
    let grid = ExperimentGrid::from_json(GRID)?;
    let outcome = run_grid(&grid, out.as_ref(), 1)?;
    print!("{}", outcome.table.to_markdown());
    for c in &outcome.cells {
        println!("{} / {}: chose {}", c.axis_value, c.feature_set, c.chosen.as_deref().unwrap_or("-"));
    }
    println!("results in {out}");
    Ok(())
}
