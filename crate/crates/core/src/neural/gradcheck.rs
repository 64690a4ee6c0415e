//! Finite-difference self-test of a model's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::tensor::Tensor2;

use super::model::{Model, ModelSpec};

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    /// Largest `|analytic − numeric| / max(1, |numeric|)` over the parameter.
    pub max_rel_err: f64,
}

/// Compares backpropagated gradients against central differences of the
/// scalar `Σ c ⊙ y` for a random input of `batch` sequences of `seq_len`
/// steps and random coefficients `c`.
pub fn check_model(spec: &ModelSpec, seq_len: usize, batch: usize, step: f64, seed: u64) -> Result<Vec<ParamCheck>> {
    let mut model = Model::new(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = seq_len * batch;
    let mut rand_t = |r: usize, c: usize| {
        let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor2::from_vec(r, c, data)
    };
    let x = rand_t(rows, spec.input_dim)?;
    let coef = rand_t(rows, spec.output_dims)?;
    let objective = |m: &Model| -> Result<f64> {
        let y = m.predict(&x, seq_len)?;
        Ok(y.data().iter().zip(coef.data()).map(|(a, b)| a * b).sum())
    };

    model.zero_grad();
    model.forward(&x, seq_len)?;
    model.backward(&coef)?;
    let analytic: Vec<Tensor2> = model.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = Vec::new();
    let n_params = analytic.len();
    for pi in 0..n_params {
        let len = analytic[pi].data().len();
        let mut worst = 0.0f64;
        for i in 0..len {
            let orig = model.params()[pi].value.data()[i];
            model.params_mut()[pi].value.data_mut()[i] = orig + step;
            let up = objective(&model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig - step;
            let down = objective(&model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = (analytic[pi].data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        report.push(ParamCheck {
            name: model.params()[pi].name.clone(),
            entries: len,
            max_rel_err: worst,
        });
    }
    Ok(report)
}
