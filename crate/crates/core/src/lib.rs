//! Pseudo-convolutional policy-gradient (PCPG) training for attention-based
//! sequence-to-sequence models.
//!
//! The crate is organised bottom-up:
//!
//! - [`metrics`]: Levenshtein distance, CER and WER.
//! - [`reward`]: per-step edit-distance rewards and discounted returns.
//! - [`pcpg`]: the windowed mapping of per-step policy-gradient losses.
//! - [`grad`]: a small reverse-mode differentiation engine.
//! - [`model`]: bidirectional GRU encoder, additive attention, GRU decoder.
//! - [`trainer`]: losses, optimizers, the training loop and the encoder probe.
//! - [`tasks`]: synthetic transduction datasets and their file format.
//! - [`cli`]: the experiment runner behind the `pcpg` binary.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod grad;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod pcpg;
pub mod reward;
pub mod rng;
pub mod selfcheck;
pub mod tasks;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
