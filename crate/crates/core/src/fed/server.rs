//! Server-side aggregation. This module sees only [`RoundUpdate`]s and the
//! global parameters, never client logs.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ModelParams;

use super::config::AdamConfig;

/// What a client sends back after its local step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundUpdate {
    pub client_id: String,
    /// Flattened `∇Θ` in parameter-block order.
    pub gradient: Vec<f64>,
    pub num_samples: usize,
}

/// Persistent first and second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedAdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
}

impl FedAdamState {
    pub fn new(num_params: usize) -> Self {
        FedAdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            steps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReport {
    pub accepted: usize,
    pub rejected: usize,
    /// L2 norm of the averaged gradient.
    pub mean_grad_norm: f64,
    /// L2 norm of the parameter change.
    pub step_norm: f64,
}

/// Average accepted updates and take one adaptive step, without bias correction:
///
/// `m ← β1 m + (1-β1) g`, `v ← β2 v + (1-β2) g²`, `θ ← θ - lr · m / (√v + τ)`.
///
/// Updates with the wrong length or non-finite entries are dropped with a
/// warning; if none remain the parameters and moments are left untouched.
pub fn fedadam_step(
    theta: &mut ModelParams,
    updates: &[RoundUpdate],
    state: &mut FedAdamState,
    cfg: &AdamConfig,
) -> Result<StepReport> {
    let n = theta.num_params();
    let mut report = StepReport::default();
    let mut mean = vec![0.0; n];
    for u in updates {
        if u.gradient.len() != n || u.gradient.iter().any(|g| !g.is_finite()) {
            warn!("rejecting update from client {}: malformed gradient", u.client_id);
            report.rejected += 1;
            continue;
        }
        mean.iter_mut().zip(&u.gradient).for_each(|(a, g)| *a += g);
        report.accepted += 1;
    }
    if report.accepted == 0 {
        return Ok(report);
    }
    let inv = 1.0 / report.accepted as f64;
    mean.iter_mut().for_each(|g| *g *= inv);
    report.mean_grad_norm = crate::linalg::norm2(&mean);

    let mut flat = theta.flatten();
    let mut step_sq = 0.0;
    for i in 0..n {
        let g = mean[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let step = cfg.server_lr * state.m[i] / (state.v[i].sqrt() + cfg.adaptivity_tau);
        flat[i] -= step;
        step_sq += step * step;
    }
    state.steps += 1;
    report.step_norm = step_sq.sqrt();
    *theta = ModelParams::unflatten(theta.dims(), &flat)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::rng::rng_from_seed;

    fn tiny() -> ModelParams {
        let dims = ModelDims {
            vocab_size: 3,
            token_dim: 2,
            dim: 2,
            num_basis: 1,
        };
        ModelParams::init(dims, &mut rng_from_seed(1)).unwrap()
    }

    fn update(g: Vec<f64>) -> RoundUpdate {
        RoundUpdate {
            client_id: "c".into(),
            gradient: g,
            num_samples: 1,
        }
    }

    #[test]
    fn zero_and_cancelling_gradients_leave_params_unchanged() {
        let mut p = tiny();
        let before = p.clone();
        let n = p.num_params();
        let mut st = FedAdamState::new(n);
        fedadam_step(&mut p, &[update(vec![0.0; n])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        let g: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 0.3).collect();
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        fedadam_step(&mut p, &[update(g), update(neg)], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn two_steps_match_hand_arithmetic() {
        let mut p = tiny();
        let n = p.num_params();
        let theta0 = p.flatten();
        let cfg = AdamConfig::default();
        let mut st = FedAdamState::new(n);
        // only the first two coordinates move
        let mut g1 = vec![0.0; n];
        g1[0] = 0.5;
        g1[1] = -2.0;
        let mut g2 = vec![0.0; n];
        g2[0] = 0.1;
        g2[1] = 1.0;
        fedadam_step(&mut p, &[update(g1)], &mut st, &cfg).unwrap();
        fedadam_step(&mut p, &[update(g2)], &mut st, &cfg).unwrap();

        // step 1: m = 0.1 g, v = 0.001 g²
        // coordinate 0: m1 = 0.05, v1 = 0.00025; coordinate 1: m1 = -0.2, v1 = 0.004
        // step 2: m2 = 0.9 m1 + 0.1 g2, v2 = 0.999 v1 + 0.001 g2²
        let m1 = [0.05, -0.2];
        let v1 = [0.00025, 0.004];
        let m2 = [0.9 * 0.05 + 0.01, 0.9 * -0.2 + 0.1];
        let v2 = [0.999 * 0.00025 + 0.001 * 0.01, 0.999 * 0.004 + 0.001];
        let after = p.flatten();
        for i in 0..2 {
            let s1 = 0.01 * m1[i] / (f64::sqrt(v1[i]) + 1e-3);
            let s2 = 0.01 * m2[i] / (f64::sqrt(v2[i]) + 1e-3);
            assert!((after[i] - (theta0[i] - s1 - s2)).abs() < 1e-12);
        }
        assert_eq!(&after[2..], &theta0[2..]);
        assert_eq!(st.steps, 2);
    }

    #[test]
    fn rejects_non_finite_updates() {
        let mut p = tiny();
        let n = p.num_params();
        let before = p.clone();
        let mut st = FedAdamState::new(n);
        let mut bad = vec![0.1; n];
        bad[3] = f64::NAN;
        let r = fedadam_step(&mut p, &[update(bad.clone()), update(vec![0.1; 2])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!((r.accepted, r.rejected), (0, 2));
        assert_eq!(p, before);
        assert_eq!(st, FedAdamState::new(n));

        let r = fedadam_step(&mut p, &[update(bad), update(vec![0.1; n])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!((r.accepted, r.rejected), (1, 1));
        assert!(p.is_finite());
        assert_ne!(p, before);
    }
}
