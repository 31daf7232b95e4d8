//! End-to-end autoencoder design of interference-aware super-constellations
//! for two-user downlink NOMA.
//!
//! A transmitter network maps each pair of user messages to one complex
//! symbol; each receiver runs its own decoder directly on its equalized
//! sample, with no successive interference cancellation. The crate contains
//! everything needed to train, evaluate and benchmark such systems:
//!
//! - [`nn`]: a small dense-network substrate (ELU/sigmoid layers, residual
//!   skips, exact backprop, Adam, finite-difference gradient checks).
//! - [`model`]: the transmitter encoder, the two receiver decoders and the
//!   extracted [`model::Codebook`].
//! - [`channel`]: the two-user AWGN downlink, SNR bookkeeping and seeded
//!   random streams.
//! - [`training`]: the adaptive weighted cross-entropy objective and the
//!   training loop, with presets for the three published scenarios.
//! - [`baselines`]: closed-form and Monte-Carlo BER for QPSK superposition
//!   NOMA with SIC and Gray 16-QAM, plus ML detection on any codebook.
//! - [`eval`]: BER sweeps, constellation reports, fairness metrics and
//!   comparison tables.
//! - [`cli`]: configuration schema, file formats and the command
//!   implementations behind the `ae-noma` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod channel;
pub mod cli;
mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
pub use num_complex::Complex64;
