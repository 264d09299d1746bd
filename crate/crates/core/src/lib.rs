//! Transformer VAE (trVAE).
//!
//! A conditional VAE whose first decoder layer is pulled together across
//! conditions with a multi-scale RBF maximum mean discrepancy penalty, so a
//! sample encoded under one condition can be decoded under another even for
//! (domain, condition) pairs never seen in training.
//!
//! Module map:
//!
//! * [`tensor`]: dense tensors and reverse-mode autodiff
//! * [`mmd`]: kernels and the biased MMD estimator
//! * [`model`]: encoder/decoder, losses, prediction
//! * [`train`]: Adam, stratified batching, the training loop
//! * [`data`]: datasets, CSV, synthetic benchmark, holdout splits
//! * [`eval`]: correlation scoring, compactness and embedding export
//! * [`run`]: JSON configs, checkpoints and end-to-end pipelines

pub mod data;
pub mod error;
pub mod eval;
pub mod mmd;
pub mod model;
pub mod rng;
pub mod run;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
