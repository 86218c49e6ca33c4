//! Cross-spectral face synthesis and verification.
//!
//! Two cycle-coupled generators translate between visible and thermal face
//! imagery, with self-attention layers and spectrally normalized patch
//! discriminators. Verification fuses real and synthesized features into a
//! single template and scores identities by cosine similarity.
//!
//! Layout:
//! - [`data`]: image codec, registration, catalogs, protocol splits, synthetic fixtures
//! - [`nn`]: tensors and differentiable layers (conv, batchnorm, attention, spectral norm)
//! - [`networks`]: generator and discriminator assemblies
//! - [`objectives`]: adversarial / cycle / pixel / feature losses
//! - [`trainer`]: Adam, schedule, checkpoints, the alternating train step
//! - [`verification`]: templates, score matrices, ROC / AUC / EER, protocol runs
//! - [`config`]: the one JSON configuration that drives a run

pub mod archive;
pub mod config;
pub mod data;
pub mod error;
pub mod networks;
pub mod nn;
pub mod objectives;
pub mod trainer;
pub mod verification;

pub use error::{Error, Result};
