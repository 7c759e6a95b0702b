//! Metrics, serving evaluation, the DP audit, configuration and sweeps.

pub mod audit;
pub mod config;
pub mod evaluate;
pub mod experiment;
pub mod metrics;

pub use audit::{dp_audit, AuditMechanism, AuditResult, AuditSpec};
pub use config::Config;
pub use evaluate::{client_payload, evaluate_serving, serve_batch, ServingEval, ServingSpec};
pub use metrics::{compute_metrics, rank_order, ImpressionMetrics, MetricSummary};
