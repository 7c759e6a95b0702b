use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

use super::params::NoiseScale;

/// Positivity map applied before renormalising a perturbed attention vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative; the ReLU kink at 0 takes derivative 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn gaussian_noise(n: usize, sigma: f64, rng: &mut SimRng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

/// i.i.d. Laplace(0, b) draws, as a signed unit exponential.
pub fn laplace_noise(n: usize, b: f64, rng: &mut SimRng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let e: f64 = Exp1.sample(rng);
            if rng.random::<bool>() {
                b * e
            } else {
                -b * e
            }
        })
        .collect()
}

/// `n` i.i.d. draws of the given family; empty for a zero scale.
pub fn draw_noise(n: usize, scale: &NoiseScale, rng: &mut SimRng) -> Vec<f64> {
    match *scale {
        _ if scale.scale() == 0.0 => Vec::new(),
        NoiseScale::Gaussian { sigma, .. } => gaussian_noise(n, sigma, rng),
        NoiseScale::Laplace { b, .. } => laplace_noise(n, b, rng),
    }
}

/// Add i.i.d. noise of the given family to `v` in place. A zero scale draws nothing.
pub fn add_noise(v: &mut [f64], scale: &NoiseScale, rng: &mut SimRng) {
    let noise = draw_noise(v.len(), scale, rng);
    v.iter_mut().zip(noise).for_each(|(x, n)| *x += n);
}

/// Apply the activation and renormalise to the simplex.
///
/// If every activated value is zero (only possible with ReLU) the uniform
/// vector is returned.
pub fn positive_normalize(noisy: &[f64], activation: Activation) -> Vec<f64> {
    let activated: Vec<f64> = noisy.iter().map(|&x| activation.apply(x)).collect();
    let total: f64 = activated.iter().sum();
    if total > 0.0 {
        activated.into_iter().map(|a| a / total).collect()
    } else {
        let n = noisy.len() as f64;
        vec![1.0 / n; noisy.len()]
    }
}

/// Gaussian-perturb a clipped attention vector and map it back onto the simplex.
pub fn perturb_positive_normalize(
    v_clipped: &[f64],
    sigma: f64,
    activation: Activation,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    perturb_with(v_clipped, &NoiseScale::Gaussian { sigma, sensitivity: 1.0 }, activation, rng)
}

/// [`perturb_positive_normalize`] for either noise family.
pub fn perturb_with(
    v_clipped: &[f64],
    scale: &NoiseScale,
    activation: Activation,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    if v_clipped.is_empty() {
        return Err(Error::invalid("cannot perturb an empty vector"));
    }
    if v_clipped.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("perturbation input contains non-finite values"));
    }
    let s = scale.scale();
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::invalid(format!("noise scale must be finite and >= 0, got {s}")));
    }
    let mut noisy = v_clipped.to_vec();
    add_noise(&mut noisy, scale, rng);
    Ok(positive_normalize(&noisy, activation))
}

/// Add Laplace(0, S/ε) noise to every coordinate.
pub fn laplace_perturb(
    v_clipped: &[f64],
    sensitivity: f64,
    epsilon: f64,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let b = super::laplace_scale(sensitivity, epsilon)?;
    let mut out = v_clipped.to_vec();
    add_noise(&mut out, &NoiseScale::Laplace { b, sensitivity }, rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn zero_vector_softplus_is_uniform() {
        let mut rng = rng_from_seed(1);
        let out = perturb_positive_normalize(&[0.0; 3], 0.0, Activation::Softplus, &mut rng).unwrap();
        for x in out {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        // vanishing but positive sigma stays within a hair of uniform
        let out = perturb_positive_normalize(&[0.0; 3], 1e-12, Activation::Softplus, &mut rng).unwrap();
        for x in out {
            assert!((x - 1.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn one_hot_relu_stays_one_hot() {
        let mut rng = rng_from_seed(2);
        let theta = 0.7;
        let out = perturb_positive_normalize(&[theta, 0.0, 0.0, 0.0], 0.0, Activation::Relu, &mut rng)
            .unwrap();
        assert_eq!(out, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_all_negative_falls_back_to_uniform() {
        assert_eq!(
            positive_normalize(&[-1.0, -0.5, -2.0, -0.1], Activation::Relu),
            vec![0.25; 4]
        );
    }

    #[test]
    fn symmetric_input_has_symmetric_mean() {
        let mut rng = rng_from_seed(3);
        let n = 100_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let out =
                perturb_positive_normalize(&[0.5, 0.5], 0.1, Activation::Softplus, &mut rng).unwrap();
            mean[0] += out[0];
            mean[1] += out[1];
        }
        for m in mean {
            assert!((m / n as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn laplace_variance_identity() {
        let mut rng = rng_from_seed(4);
        let n = 1_000_000;
        let out = laplace_perturb(&vec![0.0; n], 1.0, 1.0, &mut rng).unwrap();
        let mean = out.iter().sum::<f64>() / n as f64;
        let var = out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 2.0).abs() / 2.0 < 0.02, "var = {var}");
    }

    #[test]
    fn laplace_infinite_epsilon_is_identity() {
        let mut rng = rng_from_seed(5);
        let v = vec![0.3, -0.2, 1.5];
        assert_eq!(laplace_perturb(&v, 1.0, f64::INFINITY, &mut rng).unwrap(), v);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        let mut rng = rng_from_seed(6);
        assert!(perturb_positive_normalize(&[f64::NAN], 1.0, Activation::Relu, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn output_on_simplex(
            v in prop::collection::vec(-2.0f64..2.0, 1..16),
            sigma in 0.0f64..5.0,
            seed in any::<u64>(),
            relu in any::<bool>(),
        ) {
            let act = if relu { Activation::Relu } else { Activation::Softplus };
            let mut rng = rng_from_seed(seed);
            let out = perturb_positive_normalize(&v, sigma, act, &mut rng).unwrap();
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for x in &out {
                if relu { prop_assert!(*x >= 0.0); } else { prop_assert!(*x > 0.0); }
            }
        }
    }
}
