//! Exponential-mechanism relabelling of the positive candidate.
//!
//! Candidate index 0 holds the true positive. The mechanism picks index `i`
//! with probability `e^{y_i β} / (k + e^β)`, `β = max(0, ln(k / (C - 1)) + ε)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// `β = max(0, ln(k e^ε / (C - 1)))`; infinite for `ε = ∞`.
pub fn label_beta(num_negatives: usize, pool_size: usize, epsilon: f64) -> Result<f64> {
    if num_negatives == 0 {
        return Err(Error::invalid("label permutation needs at least one negative"));
    }
    if pool_size <= 1 {
        return Err(Error::invalid(format!(
            "candidate pool size must be >= 2, got {pool_size}"
        )));
    }
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidBudget(format!("epsilon must be > 0, got {epsilon}")));
    }
    if epsilon == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let beta = (num_negatives as f64 / (pool_size - 1) as f64).ln() + epsilon;
    Ok(beta.max(0.0))
}

/// Selection probabilities `[p_pos, p_neg, ..., p_neg]` of length `k + 1`.
pub fn label_probabilities(num_negatives: usize, beta: f64) -> Vec<f64> {
    let k = num_negatives as f64;
    // e^β / (k + e^β) rewritten with e^{-β} so β = ∞ gives exactly [1, 0, ...]
    let inv = (-beta).exp();
    let denom = 1.0 + k * inv;
    let mut probs = vec![inv / denom; num_negatives + 1];
    probs[0] = 1.0 / denom;
    probs
}

/// Sample which of the `num_candidates = k + 1` candidates becomes the positive.
pub fn permute_labels(
    num_candidates: usize,
    epsilon: f64,
    pool_size: usize,
    rng: &mut SimRng,
) -> Result<usize> {
    if num_candidates < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 candidates, got {num_candidates}"
        )));
    }
    let k = num_candidates - 1;
    let beta = label_beta(k, pool_size, epsilon)?;
    let p_pos = label_probabilities(k, beta)[0];
    if rng.random::<f64>() < p_pos {
        Ok(0)
    } else {
        Ok(1 + rng.random_range(0..k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn beta_and_probabilities_for_equal_pool() {
        let beta = label_beta(4, 5, 1.0).unwrap();
        assert!((beta - 1.0).abs() < 1e-15);
        let p = label_probabilities(4, beta);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (4.0 + e)).abs() < 1e-15);
        assert!((p[0] - 0.40461).abs() < 1e-5);
        for &q in &p[1..] {
            assert!((q - 0.14884).abs() < 1e-5);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn beta_clamps_at_zero() {
        assert_eq!(label_beta(4, 101, 1e-300).unwrap(), 0.0);
        assert_eq!(label_probabilities(4, 0.0), vec![0.2; 5]);
    }

    #[test]
    fn infinite_epsilon_keeps_true_label() {
        let p = label_probabilities(4, label_beta(4, 20, f64::INFINITY).unwrap());
        assert_eq!(p, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let mut rng = rng_from_seed(9);
        for _ in 0..1000 {
            assert_eq!(permute_labels(5, f64::INFINITY, 20, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn rejects_degenerate_pool() {
        let mut rng = rng_from_seed(0);
        assert!(permute_labels(5, 1.0, 1, &mut rng).is_err());
        assert!(permute_labels(1, 1.0, 5, &mut rng).is_err());
    }

    #[test]
    fn empirical_frequencies_match() {
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[permute_labels(5, 1.0, 5, &mut rng).unwrap()] += 1;
        }
        let p = label_probabilities(4, 1.0);
        for (c, q) in counts.iter().zip(&p) {
            assert!((*c as f64 / n as f64 - q).abs() < 0.01);
        }
    }
}
