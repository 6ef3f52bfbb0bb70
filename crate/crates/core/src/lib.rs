//! Train regularized VAEs on procedural ground-truth worlds, score their
//! representations with the standard disentanglement metrics, and run the
//! model-selection statistics over a sweep.
//!
//! Module map:
//!
//! - [`worlds`]: factor spaces, sampling and deterministic rendering.
//! - [`grad`]: a small reverse-mode autodiff graph plus Adam.
//! - [`vae`]: encoder/decoder, the six objectives, training and encoding.
//! - [`metrics`]: MIG, Modularity, DCI, SAP, BetaVAE and FactorVAE scores,
//!   plus unsupervised training scores.
//! - [`impossibility`]: twin generative models related by a rotation of the
//!   latent space that produce the same observations.
//! - [`study`]: sweeps, the score store and the analyses run on it.

pub mod error;
pub mod grad;
pub mod impossibility;
pub mod metrics;
pub mod rng;
pub mod study;
pub mod tensor_io;
pub mod vae;
pub mod worlds;

pub use error::{Error, Result};
