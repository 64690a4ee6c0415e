//! Central finite differences against backpropagation for a few model
//! shapes.

use affect::neural::gradcheck::check_model;
use affect::neural::ModelSpec;

fn main() -> affect::Result<()> {
    let shapes = [("mhal", 1, 0, false), ("lstm", 0, 1, false), ("mhal+bilstm", 1, 1, true), ("2x(mhal+bilstm)", 2, 2, true)];
    for (name, mhal, lstm, bi) in shapes {
        let spec = ModelSpec {
            input_dim: 5,
            model_dim: Some(8),
            heads: 2,
            mhal_layers: mhal,
            lstm_layers: lstm,
            bidirectional: bi,
            lstm_hidden: 4,
            output_dims: 1,
            residual: true,
            seed: 1,
        };
        let checks = check_model(&spec, 7, 2, 1e-5, 9)?;
        let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
        let entries: usize = checks.iter().map(|c| c.entries).sum();
        println!("{name:<16} {entries:>5} parameters checked, worst relative error {worst:.2e}");
    }
    Ok(())
}
