use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive noise family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Laplace,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Laplace => "laplace",
        })
    }
}

/// Per-round privacy budget for one pipeline invocation.
///
/// `epsilon = f64::INFINITY` is accepted and means "no noise"; it is how the
/// non-private baselines are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    #[serde(with = "crate::floatfmt")]
    pub epsilon: f64,
    pub delta: f64,
    /// Probability of replacing each history item by the anonymous embedding.
    pub pad_prob: f64,
    pub clip_norm: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64, pad_prob: f64, clip_norm: f64) -> Result<Self> {
        let pp = PrivacyParams {
            epsilon,
            delta,
            pad_prob,
            clip_norm,
        };
        pp.validate()?;
        Ok(pp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidBudget(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::InvalidBudget(format!(
                "delta must lie in [0, 1), got {}",
                self.delta
            )));
        }
        if !(0.0..1.0).contains(&self.pad_prob) {
            return Err(Error::InvalidBudget(format!(
                "pad_prob must lie in [0, 1), got {}",
                self.pad_prob
            )));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::invalid(format!(
                "clip_norm must be finite and > 0, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }

    /// Validation that also checks the mechanism can be calibrated.
    pub fn validate_for(&self, kind: NoiseKind) -> Result<()> {
        self.validate()?;
        if kind == NoiseKind::Gaussian && self.delta == 0.0 && self.epsilon.is_finite() {
            return Err(Error::UnsupportedMechanism(
                "delta = 0 requires the Laplace mechanism".into(),
            ));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.epsilon == f64::INFINITY
    }

    /// The noise family these parameters select: Laplace iff `δ = 0`.
    pub fn noise_kind(&self) -> NoiseKind {
        if self.delta == 0.0 {
            NoiseKind::Laplace
        } else {
            NoiseKind::Gaussian
        }
    }
}

/// Calibrated noise for one mechanism. A zero scale means noiseless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseScale {
    Gaussian { sigma: f64, sensitivity: f64 },
    Laplace { b: f64, sensitivity: f64 },
}

impl NoiseScale {
    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseScale::Gaussian { .. } => NoiseKind::Gaussian,
            NoiseScale::Laplace { .. } => NoiseKind::Laplace,
        }
    }

    /// The distribution's scale parameter (σ or b).
    pub fn scale(&self) -> f64 {
        match *self {
            NoiseScale::Gaussian { sigma, .. } => sigma,
            NoiseScale::Laplace { b, .. } => b,
        }
    }

    pub fn sensitivity(&self) -> f64 {
        match *self {
            NoiseScale::Gaussian { sensitivity, .. } | NoiseScale::Laplace { sensitivity, .. } => {
                sensitivity
            }
        }
    }

    /// Same family with the scale multiplied by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        match self {
            NoiseScale::Gaussian { sigma, sensitivity } => NoiseScale::Gaussian {
                sigma: sigma * factor,
                sensitivity,
            },
            NoiseScale::Laplace { b, sensitivity } => NoiseScale::Laplace {
                b: b * factor,
                sensitivity,
            },
        }
    }

    /// Per-coordinate noise variance.
    pub fn variance(&self) -> f64 {
        match *self {
            NoiseScale::Gaussian { sigma, .. } => sigma * sigma,
            NoiseScale::Laplace { b, .. } => 2.0 * b * b,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(PrivacyParams::new(0.0, 1e-5, 0.0, 1.0).is_err());
        assert!(PrivacyParams::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(PrivacyParams::new(1.0, 1e-5, 1.0, 1.0).is_err());
        assert!(PrivacyParams::new(1.0, 1e-5, 0.5, 0.0).is_err());
        assert!(PrivacyParams::new(f64::NAN, 1e-5, 0.5, 1.0).is_err());
        assert!(PrivacyParams::new(f64::INFINITY, 0.0, 0.0, 1.0).is_ok());
    }

    #[test]
    fn zero_delta_only_for_laplace() {
        let pp = PrivacyParams::new(1.0, 0.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            pp.validate_for(NoiseKind::Gaussian),
            Err(Error::UnsupportedMechanism(_))
        ));
        assert!(pp.validate_for(NoiseKind::Laplace).is_ok());
    }
}
