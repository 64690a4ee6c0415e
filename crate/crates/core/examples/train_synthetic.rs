//! Generates a small synthetic multimodal dataset and trains one
//! attention + BiLSTM regressor on it.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [epochs] [lr] [model_dim] [hidden]
//! ```

use std::time::Instant;

use affect::dataio::{make_partitions, synthesize_dataset, Dataset, Modality, SynthSpec};
use affect::neural::ModelSpec;
use affect::training::{train, TrainConfig};

fn main() -> affect::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let epochs = arg(0, 20.0) as usize;
    let lr = arg(1, 0.005);
    let model_dim = arg(2, 32.0) as usize;
    let hidden = arg(3, 32.0) as usize;
    let mods: Vec<Modality> = match args.get(4).map(String::as_str) {
        Some("bert") => vec![Modality::Bert],
        Some("fau") => vec![Modality::Fau],
        Some("vggish") => vec![Modality::Vggish],
        _ => vec![Modality::Bert, Modality::Vggish, Modality::Fau],
    };

    let spec = SynthSpec::new(30, 10, (600, 3000), vec![Modality::Bert, Modality::Vggish, Modality::Fau], 0.3);
    let t0 = Instant::now();
    let recordings = synthesize_dataset(&spec, 7)?;
    let partitions = make_partitions(&recordings, (0.6, 0.2, 0.2), 7)?;
    let dataset = Dataset { recordings, partitions };
    println!("synthesised {} recordings in {:.1?}", dataset.recordings.len(), t0.elapsed());

    let cfg = TrainConfig {
        lr,
        max_epochs: epochs,
        modalities: mods,
        ..TrainConfig::default()
    };
    let model = ModelSpec {
        model_dim: Some(model_dim),
        lstm_hidden: hidden,
        ..ModelSpec::deep_trust(cfg.input_dim(&dataset)?, 4, 1)
    };
    println!("{} parameters", model.param_count());
    let t0 = Instant::now();
    let result = train(&model, &cfg, &dataset, &dataset.partitions)?;
    for h in &result.history {
        println!("epoch {:3}  loss {:.4}  dev ccc {:.4}  lr {}", h.epoch, h.train_loss, h.dev_ccc, h.lr);
    }
    println!(
        "best epoch {}  dev {:.4}  test {:.4}  ({:.1?})",
        result.best_epoch,
        result.dev_ccc,
        result.test_ccc,
        t0.elapsed()
    );
    Ok(())
}
