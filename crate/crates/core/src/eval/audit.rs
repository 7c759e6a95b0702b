//! Empirical privacy audit.
//!
//! For a worst-case adjacent pair `(D, D')` the mechanism is run `N` times on
//! each side. Continuous outputs are projected onto the direction separating
//! the two inputs and binned at quantiles of an independent pilot sample;
//! discrete outputs use their categories. For every bin `E` and both orderings the privacy loss is
//! estimated as `ln((P_D(E) - δ) / P_D'(E))`, and a 99% Clopper-Pearson
//! interval on each probability turns that into lower and upper bounds. The
//! audit passes when the largest upper bound does not exceed ε.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::dp::{
    attention_noise, draw_noise, gaussian_sigma, label_beta, label_probabilities, permute_labels,
    vdp_noise, NoiseScale, PrivacyParams,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::rng::{child_rng, SimRng};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditMechanism {
    /// Private attention over B = 3 basis vectors, S = θ, with padding.
    Attention,
    /// Embedding perturbation in d = 4, S = 2θ, with padding.
    Vdp,
    /// Label permutation with k = 4 negatives from a pool of C = 20.
    Labels,
    /// The classical one-dimensional Gaussian mechanism.
    Gaussian,
}

impl AuditMechanism {
    pub const ALL: [AuditMechanism; 4] = [
        AuditMechanism::Attention,
        AuditMechanism::Vdp,
        AuditMechanism::Labels,
        AuditMechanism::Gaussian,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuditMechanism::Attention => "attention",
            AuditMechanism::Vdp => "vdp",
            AuditMechanism::Labels => "labels",
            AuditMechanism::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for AuditMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AuditMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AuditMechanism::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown audit mechanism {s:?}")))
    }
}

pub const LABEL_NEGATIVES: usize = 4;
pub const LABEL_POOL: usize = 20;
pub const ATTENTION_BASIS: usize = 3;
pub const VDP_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSpec {
    pub mechanism: AuditMechanism,
    pub privacy: PrivacyParams,
    /// Draws per side.
    pub trials: usize,
    /// Multiplier on the calibrated noise scale; below 1 is a negative control.
    pub noise_factor: f64,
    /// Target pooled samples per bin for continuous outputs.
    pub samples_per_bin: usize,
    /// Minimum expected draws per side in every bin.
    pub min_bin_count: f64,
    pub confidence: f64,
}

impl AuditSpec {
    pub fn new(mechanism: AuditMechanism, privacy: PrivacyParams) -> Self {
        AuditSpec {
            mechanism,
            privacy,
            trials: 1_000_000,
            noise_factor: 1.0,
            samples_per_bin: 10_000,
            min_bin_count: 1_000.0,
            confidence: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub mechanism: AuditMechanism,
    #[serde(with = "crate::floatfmt")]
    pub epsilon: f64,
    pub delta: f64,
    pub pad_prob: f64,
    pub noise_factor: f64,
    pub trials: usize,
    pub bins: usize,
    /// Largest point estimate of the privacy loss.
    #[serde(with = "crate::floatfmt")]
    pub eps_hat: f64,
    /// Largest lower confidence bound: evidence that the loss is at least this.
    #[serde(with = "crate::floatfmt")]
    pub eps_lower: f64,
    /// Largest upper confidence bound.
    #[serde(with = "crate::floatfmt")]
    pub eps_upper: f64,
    pub pass: bool,
}

/// Two-sided Clopper-Pearson interval for `x` successes out of `n`.
pub fn clopper_pearson(x: u64, n: u64, confidence: f64) -> (f64, f64) {
    let a = (1.0 - confidence) / 2.0;
    let lo = if x == 0 {
        0.0
    } else {
        Beta::new(x as f64, (n - x + 1) as f64)
            .expect("valid shape")
            .inverse_cdf(a)
    };
    let hi = if x == n {
        1.0
    } else {
        Beta::new((x + 1) as f64, (n - x) as f64)
            .expect("valid shape")
            .inverse_cdf(1.0 - a)
    };
    (lo, hi)
}

/// Point, lower and upper privacy-loss estimates from per-bin counts.
fn loss_bounds(counts_d: &[u64], counts_d2: &[u64], n: u64, delta: f64, confidence: f64) -> (f64, f64, f64) {
    let mut best = (0.0f64, 0.0f64, 0.0f64);
    let log_ratio = |num: f64, den: f64| -> Option<f64> {
        let num = num - delta;
        if num <= 0.0 {
            None
        } else if den <= 0.0 {
            Some(f64::INFINITY)
        } else {
            Some((num / den).ln())
        }
    };
    let ci: Vec<((f64, f64), (f64, f64))> = counts_d
        .par_iter()
        .zip(counts_d2)
        .map(|(&a, &b)| (clopper_pearson(a, n, confidence), clopper_pearson(b, n, confidence)))
        .collect();
    for ((&a, &b), &((a_lo, a_hi), (b_lo, b_hi))) in counts_d.iter().zip(counts_d2).zip(&ci) {
        let (pa, pb) = (a as f64 / n as f64, b as f64 / n as f64);
        for (p, q, p_lo, p_hi, q_lo, q_hi) in [(pa, pb, a_lo, a_hi, b_lo, b_hi), (pb, pa, b_lo, b_hi, a_lo, a_hi)] {
            if let Some(x) = log_ratio(p, q) {
                best.0 = best.0.max(x);
            }
            if let Some(x) = log_ratio(p_lo, q_hi) {
                best.1 = best.1.max(x);
            }
            if let Some(x) = log_ratio(p_hi, q_lo) {
                best.2 = best.2.max(x);
            }
        }
    }
    best
}

/// Bin edges from a pilot sample: equal-mass bins over the pooled pilot,
/// merged until each bin expects at least `min_count` main-sample draws from
/// both sides. Choosing edges on independent draws keeps the main counts
/// unbiased.
fn pilot_edges(xs: &[f64], ys: &[f64], per_bin: usize, min_count: f64, scale: f64) -> Vec<f64> {
    let mut pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    pooled.par_sort_unstable_by(f64::total_cmp);
    let bins = (pooled.len() / per_bin.max(1)).max(1);
    let mut edges: Vec<f64> = (1..bins).map(|i| pooled[i * pooled.len() / bins]).collect();
    edges.dedup();
    let (cx, cy) = (count_bins(&edges, xs), count_bins(&edges, ys));
    let enough = |a: u64, b: u64| (a.min(b) as f64) * scale >= min_count;
    let mut merged = Vec::new();
    let (mut ax, mut ay) = (0u64, 0u64);
    for (i, e) in edges.iter().enumerate() {
        ax += cx[i];
        ay += cy[i];
        if enough(ax, ay) {
            merged.push(*e);
            ax = 0;
            ay = 0;
        }
    }
    // fold a short upper tail into its neighbour
    if !enough(ax + cx[edges.len()], ay + cy[edges.len()]) {
        merged.pop();
    }
    merged
}

fn count_bins(edges: &[f64], v: &[f64]) -> Vec<u64> {
    let mut c = vec![0u64; edges.len() + 1];
    for &x in v {
        c[edges.partition_point(|&e| e <= x)] += 1;
    }
    c
}

/// Worst-case adjacent inputs and calibrated noise for a mechanism.
struct Scenario {
    d: Vec<f64>,
    d_prime: Vec<f64>,
    anonymous: Vec<f64>,
    noise: NoiseScale,
}

fn scenario(spec: &AuditSpec) -> Result<Scenario> {
    let pp = &spec.privacy;
    let theta = pp.clip_norm;
    Ok(match spec.mechanism {
        AuditMechanism::Attention => {
            // two simplex points at distance exactly S = θ (θ = 1)
            let h = std::f64::consts::FRAC_1_SQRT_2;
            let scale = theta;
            Scenario {
                d: vec![scale, 0.0, 0.0],
                d_prime: vec![scale * (1.0 - h), scale * h, 0.0],
                anonymous: vec![scale / 3.0; 3],
                noise: attention_noise(pp)?,
            }
        }
        AuditMechanism::Vdp => {
            let mut d = vec![0.0; VDP_DIM];
            d[0] = theta;
            let mut d_prime = vec![0.0; VDP_DIM];
            d_prime[0] = -theta;
            Scenario {
                d,
                d_prime,
                anonymous: vec![0.0; VDP_DIM],
                noise: vdp_noise(pp)?,
            }
        }
        AuditMechanism::Gaussian => Scenario {
            d: vec![0.0],
            d_prime: vec![theta],
            anonymous: vec![0.0],
            noise: NoiseScale::Gaussian {
                sigma: gaussian_sigma(pp.epsilon, pp.delta, theta)?,
                sensitivity: theta,
            },
        },
        AuditMechanism::Labels => unreachable!("labels are discrete"),
    })
}

fn sample_projection(
    sc: &Scenario,
    input: &[f64],
    pad_prob: f64,
    noise: &NoiseScale,
    n: usize,
    seed: u64,
) -> Vec<f64> {
    let dir: Vec<f64> = sc.d.iter().zip(&sc.d_prime).map(|(a, b)| a - b).collect();
    let len = norm2(&dir);
    let dir: Vec<f64> = dir.iter().map(|x| x / len).collect();
    const CHUNK: usize = 1 << 14;
    (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = child_rng(seed, &[c as u64]);
            let m = CHUNK.min(n - c * CHUNK);
            let dir = &dir;
            (0..m)
                .map(move |_| {
                    let base = if pad_prob > 0.0 && rng.random::<f64>() < pad_prob {
                        &sc.anonymous
                    } else {
                        input
                    };
                    let z = draw_noise(base.len(), noise, &mut rng);
                    let out: Vec<f64> = base.iter().zip(&z).map(|(b, z)| b + z).collect();
                    dot(&out, dir)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn sample_labels(true_index: usize, epsilon: f64, n: usize, seed: u64) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; LABEL_NEGATIVES + 1];
    let mut rng: SimRng = child_rng(seed, &[]);
    for _ in 0..n {
        let chosen = permute_labels(LABEL_NEGATIVES + 1, epsilon, LABEL_POOL, &mut rng)?;
        // index 0 is the true positive; map back to candidate identity
        let item = if chosen == 0 {
            true_index
        } else if chosen - 1 < true_index {
            chosen - 1
        } else {
            chosen
        };
        counts[item] += 1;
    }
    Ok(counts)
}

/// Run one audit. `seed` fixes every draw.
pub fn dp_audit(spec: &AuditSpec, seed: u64) -> Result<AuditResult> {
    let pp = &spec.privacy;
    pp.validate()?;
    if spec.trials < 100_000 {
        return Err(Error::invalid("an audit needs at least 1e5 trials per side"));
    }
    if !(spec.noise_factor > 0.0) {
        return Err(Error::invalid("noise_factor must be > 0"));
    }
    let n = spec.trials;
    let (cd, cd2) = match spec.mechanism {
        AuditMechanism::Labels => {
            if spec.noise_factor != 1.0 {
                return Err(Error::invalid("the label mechanism has no noise scale to shrink"));
            }
            (sample_labels(0, pp.epsilon, n, seed ^ 1)?, sample_labels(1, pp.epsilon, n, seed ^ 2)?)
        }
        _ => {
            let sc = scenario(spec)?;
            let noise = sc.noise.scaled(spec.noise_factor);
            let pad = if spec.mechanism == AuditMechanism::Gaussian { 0.0 } else { pp.pad_prob };
            let pilot = (n / 5).max(1);
            let px = sample_projection(&sc, &sc.d, pad, &noise, pilot, child_seed(seed, 3));
            let py = sample_projection(&sc, &sc.d_prime, pad, &noise, pilot, child_seed(seed, 4));
            let scale = n as f64 / pilot as f64;
            let edges = pilot_edges(&px, &py, spec.samples_per_bin / 5, spec.min_bin_count, scale);
            let xs = sample_projection(&sc, &sc.d, pad, &noise, n, child_seed(seed, 1));
            let ys = sample_projection(&sc, &sc.d_prime, pad, &noise, n, child_seed(seed, 2));
            (count_bins(&edges, &xs), count_bins(&edges, &ys))
        }
    };
    let (eps_hat, eps_lower, eps_upper) = loss_bounds(&cd, &cd2, n as u64, pp.delta, spec.confidence);
    Ok(AuditResult {
        mechanism: spec.mechanism,
        epsilon: pp.epsilon,
        delta: pp.delta,
        pad_prob: pp.pad_prob,
        noise_factor: spec.noise_factor,
        trials: n,
        bins: cd.len(),
        eps_hat,
        eps_lower,
        eps_upper,
        pass: eps_upper <= pp.epsilon,
    })
}

fn child_seed(seed: u64, k: u64) -> u64 {
    crate::rng::derive_seed(seed, &[k])
}

/// Analytic worst-case label privacy loss, `β`.
pub fn label_loss(epsilon: f64) -> Result<f64> {
    let beta = label_beta(LABEL_NEGATIVES, LABEL_POOL, epsilon)?;
    let p = label_probabilities(LABEL_NEGATIVES, beta);
    Ok((p[0] / p[1]).ln())
}
