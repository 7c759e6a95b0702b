//! Federated training: client local steps, FedAdam aggregation and the round loop.
//!
//! [`server`] depends only on [`RoundUpdate`] and the model, so aggregation
//! cannot read client logs.

pub mod client;
pub mod config;
pub mod server;
pub mod train;

pub use client::{local_update, local_update_dpfedrec, local_update_plain, LocalResult};
pub use config::{AdamConfig, FedConfig, TrainMode};
pub use server::{fedadam_step, FedAdamState, RoundUpdate, StepReport};
pub use train::{run_training, RoundRecord, TrainOutcome, Validator};
