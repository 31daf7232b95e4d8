//! Minimal dense-network substrate.
//!
//! Networks here are small (a few thousand weights), so everything runs in
//! `f64` on batched [`ndarray`] matrices where each row is one sample.

mod activation;
mod adam;
mod gradcheck;
mod mlp;

pub use activation::{elu, sigmoid, softplus, Activation};
pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, Parameterized, ABS_FLOOR};
pub use mlp::{DenseLayer, ForwardTape, Mlp, MlpGrads, MlpSpec};
