//! Noise calibration.
//!
//! Padding each history item with the anonymous embedding with probability
//! `p` acts like subsampling with rate `1 - p`: a base mechanism run at
//! `(ε', δ / (1 - p))` with `ε' = ln((e^ε - p) / (1 - p))` yields `(ε, δ)`
//! overall. The Gaussian scale is then `S / ε' · sqrt(2 ln(1.25 (1 - p) / δ))`.

use crate::error::{Error, Result};

use super::params::{NoiseScale, PrivacyParams};

/// Classical Gaussian mechanism scale `(S / ε) · sqrt(2 ln(1.25 / δ))`.
pub fn gaussian_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    let pp = PrivacyParams {
        epsilon,
        delta,
        pad_prob: 0.0,
        clip_norm: 1.0,
    };
    amplified_gaussian_sigma(&pp, sensitivity)
}

/// `ln((e^ε - p) / (1 - p))`, evaluated without overflowing for large ε.
pub fn amplified_epsilon(epsilon: f64, pad_prob: f64) -> f64 {
    if epsilon == f64::INFINITY {
        return f64::INFINITY;
    }
    epsilon + (-pad_prob * (-epsilon).exp()).ln_1p() - (-pad_prob).ln_1p()
}

fn check_sensitivity(sensitivity: f64) -> Result<()> {
    if sensitivity.is_finite() && sensitivity > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "sensitivity must be finite and > 0, got {sensitivity}"
        )))
    }
}

/// Gaussian scale for the padded attention mechanism. Returns 0 for `ε = ∞`.
pub fn amplified_gaussian_sigma(pp: &PrivacyParams, sensitivity: f64) -> Result<f64> {
    pp.validate()?;
    check_sensitivity(sensitivity)?;
    if pp.is_noiseless() {
        return Ok(0.0);
    }
    if pp.delta == 0.0 {
        return Err(Error::UnsupportedMechanism(
            "Gaussian calibration needs delta > 0; use the Laplace mechanism".into(),
        ));
    }
    let eps_amp = amplified_epsilon(pp.epsilon, pp.pad_prob);
    if !(eps_amp > 0.0) {
        return Err(Error::InvalidBudget(format!(
            "log((e^eps - p)/(1 - p)) must be > 0 (eps = {}, p = {})",
            pp.epsilon, pp.pad_prob
        )));
    }
    let tail = delta_log_term(pp)?;
    Ok(sensitivity / eps_amp * (2.0 * tail).sqrt())
}

/// Gaussian scale for the embedding-perturbation baseline: the `(1 - p)` factor
/// relaxes δ but ε is not amplified.
pub fn padded_gaussian_sigma(pp: &PrivacyParams, sensitivity: f64) -> Result<f64> {
    pp.validate()?;
    check_sensitivity(sensitivity)?;
    if pp.is_noiseless() {
        return Ok(0.0);
    }
    if pp.delta == 0.0 {
        return Err(Error::UnsupportedMechanism(
            "Gaussian calibration needs delta > 0; use the Laplace mechanism".into(),
        ));
    }
    let tail = delta_log_term(pp)?;
    Ok(sensitivity / pp.epsilon * (2.0 * tail).sqrt())
}

fn delta_log_term(pp: &PrivacyParams) -> Result<f64> {
    let tail = (1.25 * (1.0 - pp.pad_prob) / pp.delta).ln();
    if tail > 0.0 {
        Ok(tail)
    } else {
        Err(Error::InvalidBudget(format!(
            "1.25 (1 - p) / delta must exceed 1 (p = {}, delta = {})",
            pp.pad_prob, pp.delta
        )))
    }
}

/// Laplace scale `S / ε`; 0 for `ε = ∞`.
pub fn laplace_scale(sensitivity: f64, epsilon: f64) -> Result<f64> {
    check_sensitivity(sensitivity)?;
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidBudget(format!("epsilon must be > 0, got {epsilon}")));
    }
    Ok(sensitivity / epsilon)
}

/// Laplace scale for the padded attention mechanism, `S / ε'`.
pub fn amplified_laplace_scale(pp: &PrivacyParams, sensitivity: f64) -> Result<f64> {
    pp.validate()?;
    laplace_scale(sensitivity, amplified_epsilon(pp.epsilon, pp.pad_prob))
}

/// Noise for the padded attention mechanism with `S = θ = pp.clip_norm`:
/// Gaussian when `δ > 0`, Laplace when `δ = 0`.
pub fn attention_noise(pp: &PrivacyParams) -> Result<NoiseScale> {
    let sensitivity = pp.clip_norm;
    Ok(if pp.delta == 0.0 {
        NoiseScale::Laplace {
            b: amplified_laplace_scale(pp, sensitivity)?,
            sensitivity,
        }
    } else {
        NoiseScale::Gaussian {
            sigma: amplified_gaussian_sigma(pp, sensitivity)?,
            sensitivity,
        }
    })
}

/// Noise for the embedding-perturbation baseline with `S = 2θ`: padded
/// Gaussian when `δ > 0`, Laplace(S/ε) when `δ = 0`.
pub fn vdp_noise(pp: &PrivacyParams) -> Result<NoiseScale> {
    pp.validate()?;
    let sensitivity = 2.0 * pp.clip_norm;
    Ok(if pp.delta == 0.0 {
        NoiseScale::Laplace {
            b: laplace_scale(sensitivity, pp.epsilon)?,
            sensitivity,
        }
    } else {
        NoiseScale::Gaussian {
            sigma: padded_gaussian_sigma(pp, sensitivity)?,
            sensitivity,
        }
    })
}
