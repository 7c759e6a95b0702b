//! Simulator for differentially private federated news recommendation.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`dp`]: clipping, noise calibration (including amplification by behavior
//!   padding), perturbation and the exponential-mechanism label sampler.
//! - [`model`]: the attention news/user encoders, basis decomposition,
//!   scoring, hand-derived gradients and checkpoints.
//! - [`fed`]: client local updates, FedAdam aggregation and the training loop.
//! - [`serving`]: private online serving and the VDP baseline.
//! - [`data`]: TSV ingestion, splitting and the planted-factor generator.
//! - [`eval`]: ranking metrics, the DP audit harness, configuration and sweeps.

pub mod data;
pub mod dp;
pub mod error;
pub mod eval;
pub mod fed;
pub mod floatfmt;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod serving;

pub use error::{Error, Result};
