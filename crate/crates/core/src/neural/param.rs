use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor2;

/// A trainable matrix with its accumulated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor2,
    pub grad: Tensor2,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor2) -> Self {
        let (r, c) = value.shape();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor2::zeros(r, c),
        }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self::new(name, Tensor2::zeros(rows, cols))
    }

    /// Uniform in ±√(6 / (fan_in + fan_out)) with a stream derived from
    /// `(seed, name)`, so a parameter's initial value does not depend on which
    /// other parameters exist.
    pub fn glorot(name: impl Into<String>, rows: usize, cols: usize, seed: u64) -> Self {
        let name = name.into();
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let mut rng = param_rng(seed, &name, 0);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self::new(name, Tensor2::from_vec(rows, cols, data).expect("sized"))
    }

    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Deterministic RNG for one parameter (and optional sub-stream).
pub(crate) fn param_rng(seed: u64, name: &str, stream: u64) -> ChaCha8Rng {
    // FNV-1a over the name, mixed with seed and stream
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h.rotate_left(17));
    rng.set_stream(stream);
    rng
}
