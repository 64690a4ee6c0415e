//! Continuous affect regression from multimodal time series.
//!
//! The crate covers the full pipeline: rater fusion into a gold standard
//! ([`annotation_fusion`]), time-aligned feature and label files
//! ([`dataio`]), window segmentation and stitching ([`windowing`]), an
//! attention + LSTM regressor with hand-written gradients ([`neural`]),
//! optimisation and fusion strategies ([`training`]), and grid experiments
//! with result tables ([`harness`]). Evaluation metrics live in [`metrics`].
//!
//! Runnable walkthroughs are in `examples/`:
//!
//! | example | shows |
//! |---|---|
//! | `metrics` | CCC, PCC, RMSE and partition-level reports |
//! | `fuse_annotations` | EWE gold standard from noisy rater traces |
//! | `windowing` | segmenting and stitching a recording |
//! | `gradient_check` | finite-difference self-test of the model |
//! | `train_synthetic` | one training run on generated data |
//! | `multimodal_fusion` | early versus late fusion |
//! | `multitask` | joint trust / arousal / valence prediction |
//! | `ablation_grid` | a small heads-axis grid with a markdown table |

pub mod annotation_fusion;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod neural;
pub mod training;
pub mod windowing;

mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor2;
