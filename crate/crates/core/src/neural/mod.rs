//! Differentiable building blocks and the composed sequence regressor.
//!
//! Batches are stacked row-wise: `B` sequences of `T` steps form a
//! `(B·T) × d` matrix, sequence `b` occupying rows `b·T..(b+1)·T`.

mod attention;
pub mod gradcheck;
mod layers;
mod lstm;
mod model;
mod param;

pub use crate::tensor::Tensor2;
pub use attention::{attention, attention_with_probs, MhaCache, MultiHeadAttention};
pub use layers::{LayerNorm, LayerNormCache, Linear, LAYER_NORM_EPS};
pub use lstm::{Direction, Lstm, LstmCache, LstmLayer, LstmLayerCache};
pub use model::{Checkpoint, Model, ModelSpec, CHECKPOINT_VERSION, DEFAULT_LSTM_HIDDEN};
pub use param::Parameter;

/// Runs a single-direction LSTM over one `T × d_in` sequence from zero state.
pub fn lstm_forward(s: &Tensor2, lstm: &Lstm) -> crate::Result<Tensor2> {
    Ok(lstm.forward(s, s.rows())?.0)
}
