//! Continuous affect recognition from face video.
//!
//! The pipeline: a masked-autoencoder frame encoder ([`mae`]) produces
//! per-frame features; videos are cut into overlapping windows
//! ([`segmentation`]); each window runs through a dilated temporal
//! convolution stack, a transformer encoder and a task head ([`temporal`]);
//! training and evaluation use the concordance, cross-entropy and
//! binary cross-entropy objectives in [`objectives`]. Everything is built
//! on the small reverse-mode autodiff engine in [`tensor`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod labels;
pub mod mae;
pub mod nn;
pub mod objectives;
pub mod segmentation;
pub mod temporal;
pub mod tensor;
pub mod trainer;

pub use tensor::{Tensor, TensorError};

/// Deterministic generator used for initialisation, masking, dropout and
/// shuffling.
pub type Rng = rand_chacha::ChaCha8Rng;
