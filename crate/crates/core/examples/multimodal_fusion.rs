//! Early fusion (concatenated features, one model) against late fusion (one
//! model per modality, then a small LSTM over their predictions).
//!
//! ```text
//! cargo run --release --example multimodal_fusion -- [epochs]
//! ```

use affect::dataio::{make_partitions, synthesize_dataset, Dataset, Modality, SynthSpec};
use affect::neural::ModelSpec;
use affect::training::{late_fuse, train, TrainConfig};

fn main() -> affect::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mods = vec![Modality::Vggish, Modality::Fau];
    let spec = SynthSpec::new(16, 8, (400, 900), mods.clone(), 0.6);
    let recordings = synthesize_dataset(&spec, 5)?;
    let partitions = make_partitions(&recordings, (0.6, 0.2, 0.2), 5)?;
    let ds = Dataset { recordings, partitions };

    let base = TrainConfig {
        lr: 0.005,
        max_epochs: epochs,
        ..TrainConfig::default()
    };
    let fit = |modalities: Vec<Modality>| {
        let cfg = TrainConfig { modalities, ..base.clone() };
        let model = ModelSpec {
            model_dim: Some(16),
            lstm_hidden: 16,
            ..ModelSpec::deep_trust(cfg.input_dim(&ds)?, 4, 3)
        };
        train(&model, &cfg, &ds, &ds.partitions)
    };

    let mut singles = Vec::new();
    for m in &mods {
        let r = fit(vec![*m])?;
        println!("{:<8} dev {:.4} test {:.4}", m.name(), r.dev_ccc, r.test_ccc);
        singles.push(r);
    }
    let early = fit(mods.clone())?;
    println!("{:<8} dev {:.4} test {:.4}", "early", early.dev_ccc, early.test_ccc);
    let inputs: Vec<_> = singles.iter().map(|r| &r.predictions).collect();
    let late = late_fuse(&inputs, &ds, &ds.partitions, &base)?;
    println!("{:<8} dev {:.4} test {:.4}", "late", late.dev_ccc, late.test_ccc);
    Ok(())
}
