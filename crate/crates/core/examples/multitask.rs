//! One model predicting trustworthiness, arousal and valence together under
//! different task weightings.

use affect::annotation_fusion::Dimension;
use affect::dataio::{make_partitions, synthesize_dataset, Dataset, Modality, PartitionName, SynthSpec};
use affect::metrics::ccc;
use affect::neural::ModelSpec;
use affect::training::{train, TrainConfig};

fn main() -> affect::Result<()> {
    let spec = SynthSpec::new(12, 6, (300, 600), vec![Modality::Fau], 0.3);
    let recordings = synthesize_dataset(&spec, 2)?;
    let partitions = make_partitions(&recordings, (0.6, 0.2, 0.2), 2)?;
    let ds = Dataset { recordings, partitions };

    println!("{:<16} {:>8} {:>8} {:>8}", "weights", "trust", "arousal", "valence");
    for w in [[1.0, 0.0, 0.0], [1.0 / 3.0; 3], [0.5, 0.25, 0.25]] {
        let cfg = TrainConfig {
            lr: 0.005,
            max_epochs: 15,
            task_weights: Some(w.to_vec()),
            ..TrainConfig::default()
        };
        let model = ModelSpec {
            model_dim: Some(16),
            lstm_hidden: 16,
            output_dims: cfg.output_dims(),
            ..ModelSpec::deep_trust(cfg.input_dim(&ds)?, 2, 0)
        };
        let r = train(&model, &cfg, &ds, &ds.partitions)?;
        // test-set CCC of every output column
        let mut scores = Vec::new();
        for (k, d) in Dimension::ALL.iter().enumerate() {
            let (mut p, mut l) = (Vec::new(), Vec::new());
            for rec in ds.partition(PartitionName::Test) {
                p.extend_from_slice(&r.predictions[&rec.recording_id][k]);
                l.extend_from_slice(&rec.labels[d]);
            }
            scores.push(ccc(&p, &l)?);
        }
        let label = format!("{:.2}/{:.2}/{:.2}", w[0], w[1], w[2]);
        println!("{label:<16} {:>8.4} {:>8.4} {:>8.4}", scores[0], scores[1], scores[2]);
    }
    Ok(())
}
