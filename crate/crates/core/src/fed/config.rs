use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dp::PrivacyParams;
use crate::error::{Error, Result};

/// Which local-update protocol clients run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Private attention, behavior padding and label permutation.
    PrivateRec,
    /// Plain gradient, clipped and Laplace-perturbed.
    DpFedRec,
    /// Plain gradient, no privacy.
    FedRec,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::PrivateRec, TrainMode::DpFedRec, TrainMode::FedRec];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::PrivateRec => "privaterec",
            TrainMode::DpFedRec => "dpfedrec",
            TrainMode::FedRec => "fedrec",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mode {s:?} (privaterec, dpfedrec, fedrec)")))
    }
}

/// Server optimiser constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adaptivity_tau: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            server_lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adaptivity_tau: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub num_rounds: usize,
    pub sample_ratio: f64,
    pub num_negatives: usize,
    /// Candidate pool size `C` for label permutation; `None` uses each
    /// client's own impression size.
    pub pool_size: Option<usize>,
    /// `(ε_t, δ_t, p, θ)` for the private-attention mechanism.
    pub train_privacy: PrivacyParams,
    /// Gradient clipping norm of the gradient-perturbation baseline.
    pub dpfedrec_clip: f64,
    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adaptivity_tau: f64,
    /// Validate every this many rounds; 0 validates only after the last round.
    pub eval_every: usize,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            num_rounds: 200,
            sample_ratio: 0.05,
            num_negatives: 4,
            pool_size: None,
            train_privacy: PrivacyParams {
                epsilon: 10.0,
                delta: 1e-5,
                pad_prob: 0.5,
                clip_norm: 1.0,
            },
            dpfedrec_clip: 0.005,
            server_lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adaptivity_tau: 1e-3,
            eval_every: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        self.train_privacy.validate()?;
        if !(self.sample_ratio > 0.0 && self.sample_ratio <= 1.0) {
            return Err(Error::invalid(format!(
                "sample_ratio must be in (0, 1], got {}",
                self.sample_ratio
            )));
        }
        if self.num_negatives == 0 {
            return Err(Error::invalid("num_negatives must be >= 1"));
        }
        if let Some(c) = self.pool_size {
            if self.num_negatives >= c {
                return Err(Error::invalid(format!(
                    "num_negatives ({}) must be below pool_size ({c})",
                    self.num_negatives
                )));
            }
        }
        if !(self.dpfedrec_clip.is_finite() && self.dpfedrec_clip > 0.0) {
            return Err(Error::invalid("dpfedrec_clip must be finite and > 0"));
        }
        let a = self.adam();
        if !(a.server_lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.adaptivity_tau > 0.0) {
            return Err(Error::invalid("FedAdam constants out of range"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            server_lr: self.server_lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adaptivity_tau: self.adaptivity_tau,
        }
    }

    /// `m = ⌊r·n⌋`, which must be at least 1.
    pub fn clients_per_round(&self, population: usize) -> Result<usize> {
        let m = (self.sample_ratio * population as f64).floor() as usize;
        if m == 0 {
            return Err(Error::invalid(format!(
                "sample_ratio {} selects no client from {population}",
                self.sample_ratio
            )));
        }
        Ok(m.min(population))
    }
}
