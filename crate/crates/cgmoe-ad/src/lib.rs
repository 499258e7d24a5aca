//! Context-routed mixture-of-experts anomaly detection.
//!
//! A frozen patch encoder summarizes each image into layer-wise features and a
//! global context token. A gating network turns that token into soft routing
//! weights over a bank of expert feed-forward networks; the expert weight
//! matrices are mixed once per image and a lightweight transformer decoder
//! reconstructs the encoder features through the mixed experts. Anomalies are
//! scored by how badly feature points reconstruct.
//!
//! The crate also ships the surrounding machinery needed to run that model end
//! to end on real or generated data:
//!
//! - [`tensor`]: a minimal dense tensor with reverse-mode differentiation
//! - [`model`]: encoder, gating, expert bank and decoder
//! - [`train`]: hard-mined cosine reconstruction loss and the training loop
//! - [`scoring`]: anomaly maps and image-level scores
//! - [`metrics`]: exact AUROC / average precision and dataset-wide evaluation
//! - [`dataset`]: MVTec-style standardization pipeline (convert, tile, split,
//!   balance, grid-location annotation, stats)
//! - [`synth`]: deterministic synthetic benchmark generator with
//!   context-dependent anomaly pairs
//! - [`cli`]: the `cgmoe-ad` command-line entry point
//!
//! Start with the runnable programs under `examples/`; each demonstrates one
//! capability in isolation.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod imgio;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scoring;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Gradients, Scalar, Tensor};
