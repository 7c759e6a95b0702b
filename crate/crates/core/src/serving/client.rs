//! Client-side payload construction. Only this side reads history tokens.

use crate::dp::{
    add_noise, attention_noise, clip_l2_in_place, perturb_with, vdp_noise, Activation, PrivacyParams,
};
use crate::error::{Error, Result};
use crate::model::{
    anonymous_embedding, decompose_attention, draw_pad_mask, encode_news, encode_user, ModelParams,
};
use crate::rng::SimRng;

use super::PrivateAttention;

fn user_embedding(model: &ModelParams, history: &[&[u32]], pad_mask: &[bool]) -> Result<Vec<f64>> {
    if history.is_empty() {
        return Err(Error::invalid("history is empty"));
    }
    if pad_mask.len() != history.len() {
        return Err(Error::invalid("padding mask length differs from history length"));
    }
    let r0 = if pad_mask.iter().any(|&m| m) {
        Some(anonymous_embedding(&model.news, history[0].len())?)
    } else {
        None
    };
    let embs = history
        .iter()
        .zip(pad_mask)
        .map(|(tokens, &pad)| match (&r0, pad) {
            (Some(r0), true) => Ok(r0.clone()),
            _ => encode_news(&model.news, tokens),
        })
        .collect::<Result<Vec<_>>>()?;
    encode_user(&model.user, &embs)
}

/// Pre-noise attention `ᾱ`: encode, pad per `pad_mask`, pool, decompose, clip.
pub fn clipped_attention(
    model: &ModelParams,
    history: &[&[u32]],
    pad_mask: &[bool],
    clip_norm: f64,
) -> Result<Vec<f64>> {
    let u = user_embedding(model, history, pad_mask)?;
    let mut alpha = decompose_attention(&u, &model.basis);
    clip_l2_in_place(&mut alpha, clip_norm)?;
    Ok(alpha)
}

/// The private attention payload. Uses `pp.clip_norm` as both θ and S;
/// `δ = 0` selects Laplace noise.
pub fn get_priv_attn(
    history: &[&[u32]],
    pp: &PrivacyParams,
    model: &ModelParams,
    activation: Activation,
    rng: &mut SimRng,
) -> Result<PrivateAttention> {
    let scale = attention_noise(pp)?;
    let mask = draw_pad_mask(history.len(), pp.pad_prob, rng);
    let alpha = clipped_attention(model, history, &mask, pp.clip_norm)?;
    PrivateAttention::new(perturb_with(&alpha, &scale, activation, rng)?)
}

/// The perturbed user embedding of the embedding-perturbation baseline.
///
/// `u` is clipped to θ = `pp.clip_norm` and perturbed with S = 2θ: Gaussian
/// noise when δ > 0, Laplace(S/ε) when δ = 0.
pub fn vdp_embed(
    history: &[&[u32]],
    pp: &PrivacyParams,
    model: &ModelParams,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let scale = vdp_noise(pp)?;
    let mask = draw_pad_mask(history.len(), pp.pad_prob, rng);
    let mut u = user_embedding(model, history, &mask)?;
    clip_l2_in_place(&mut u, pp.clip_norm)?;
    add_noise(&mut u, &scale, rng);
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{amplified_gaussian_sigma, gaussian_sigma, positive_normalize};
    use crate::linalg::norm2;
    use crate::model::{forward, ForwardNoise, ModelDims, Sample, UserPath};
    use crate::rng::rng_from_seed;

    fn model(dim: usize, basis: usize) -> ModelParams {
        let dims = ModelDims {
            vocab_size: 30,
            token_dim: dim,
            dim,
            num_basis: basis,
        };
        ModelParams::init(dims, &mut rng_from_seed(11)).unwrap()
    }

    fn histories() -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
        let a = vec![vec![1, 2, 3, 0], vec![4, 5, 0, 0], vec![6, 7, 8, 9]];
        let b = vec![vec![1, 2, 3, 0], vec![10, 11, 12, 0], vec![6, 7, 8, 9]];
        (a, b)
    }

    fn refs(h: &[Vec<u32>]) -> Vec<&[u32]> {
        h.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn noiseless_equals_renormalised_softmax() {
        let m = model(8, 3);
        let (a, _) = histories();
        let pp = PrivacyParams::new(f64::INFINITY, 1e-5, 0.0, 1.0).unwrap();
        for act in [Activation::Softplus, Activation::Relu] {
            let out = get_priv_attn(&refs(&a), &pp, &m, act, &mut rng_from_seed(1)).unwrap();
            let alpha = clipped_attention(&m, &refs(&a), &[false; 3], 1.0).unwrap();
            assert_eq!(out.coeffs(), positive_normalize(&alpha, act).as_slice());
        }
    }

    #[test]
    fn matches_training_forward_pass() {
        let m = model(8, 3);
        let (a, _) = histories();
        let mask = vec![false, true, false];
        let alpha = clipped_attention(&m, &refs(&a), &mask, 0.3).unwrap();
        let noise = vec![0.01, -0.2, 0.05];
        let sample = Sample {
            history: refs(&a),
            candidates: vec![&a[0], &a[1]],
            labels: vec![1, 0],
        };
        let tape = forward(
            &m,
            &sample,
            UserPath::Decomposed {
                clip_norm: 0.3,
                activation: Activation::Relu,
            },
            &ForwardNoise {
                pad_mask: mask,
                attn_noise: noise.clone(),
            },
        )
        .unwrap();
        let noisy: Vec<f64> = alpha.iter().zip(&noise).map(|(a, n)| a + n).collect();
        let expected = positive_normalize(&noisy, Activation::Relu);
        for (x, y) in tape.private_attention().unwrap().iter().zip(&expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn full_padding_hides_item_identity() {
        let m = model(8, 3);
        let (a, b) = histories();
        let mask = [true; 3];
        let x = clipped_attention(&m, &refs(&a), &mask, 1.0).unwrap();
        let y = clipped_attention(&m, &refs(&b), &mask, 1.0).unwrap();
        assert_eq!(x, y);
        // and the unpadded histories differ
        let x = clipped_attention(&m, &refs(&a), &[false; 3], 1.0).unwrap();
        let y = clipped_attention(&m, &refs(&b), &[false; 3], 1.0).unwrap();
        assert_ne!(x, y);
    }

    #[test]
    fn deterministic_given_seed() {
        let m = model(8, 3);
        let (a, _) = histories();
        let pp = PrivacyParams::new(1.0, 1e-5, 0.5, 1.0).unwrap();
        let run = |s| get_priv_attn(&refs(&a), &pp, &m, Activation::Softplus, &mut rng_from_seed(s)).unwrap();
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
        let out = run(3);
        assert!(out.coeffs().iter().all(|&c| c > 0.0));
        assert!((out.coeffs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_budget_fails_before_work() {
        let m = model(8, 3);
        let pp = PrivacyParams {
            epsilon: 0.1,
            delta: 1e-5,
            pad_prob: 0.99,
            clip_norm: 1.0,
        };
        // e^0.1 > 0.99, so this budget is valid
        assert!(get_priv_attn(&[&[1]], &pp, &m, Activation::Softplus, &mut rng_from_seed(0)).is_ok());
        let pp = PrivacyParams { epsilon: 0.0, ..pp };
        assert!(matches!(
            get_priv_attn(&[], &pp, &m, Activation::Softplus, &mut rng_from_seed(0)),
            Err(Error::InvalidBudget(_))
        ));
        // δ = 0 is the Laplace mechanism
        let pp = PrivacyParams { epsilon: 1.0, delta: 0.0, ..pp };
        let attn = get_priv_attn(&[&[1]], &pp, &m, Activation::Softplus, &mut rng_from_seed(0)).unwrap();
        assert!((attn.coeffs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vdp_noiseless_is_clipped_embedding() {
        let m = model(8, 3);
        let (a, _) = histories();
        let pp = PrivacyParams::new(f64::INFINITY, 1e-5, 0.0, 0.001).unwrap();
        let out = vdp_embed(&refs(&a), &pp, &m, &mut rng_from_seed(1)).unwrap();
        let u = user_embedding(&m, &refs(&a), &[false; 3]).unwrap();
        assert!(norm2(&u) > 0.001);
        let clipped: Vec<f64> = u.iter().map(|x| x * 0.001 / norm2(&u)).collect();
        for (x, y) in out.iter().zip(&clipped) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn vdp_noise_energy_is_d_sigma_squared() {
        let d = 4;
        let m = model(d, 2);
        let (a, _) = histories();
        let pp = PrivacyParams::new(1.0, 1e-5, 0.0, 0.001).unwrap();
        let sigma = gaussian_sigma(1.0, 1e-5, 0.002).unwrap();
        let clean = vdp_embed(
            &refs(&a),
            &PrivacyParams { epsilon: f64::INFINITY, ..pp },
            &m,
            &mut rng_from_seed(0),
        )
        .unwrap();
        let mut rng = rng_from_seed(5);
        let n = 100_000;
        let mut total = 0.0;
        for _ in 0..n {
            let out = vdp_embed(&refs(&a), &pp, &m, &mut rng).unwrap();
            total += out.iter().zip(&clean).map(|(x, c)| (x - c).powi(2)).sum::<f64>();
        }
        let mean = total / n as f64;
        let expected = d as f64 * sigma * sigma;
        assert!((mean / expected - 1.0).abs() < 0.02, "{mean} vs {expected}");
    }

    #[test]
    fn payload_sizes_follow_basis_and_dimension() {
        let m = model(64, 5);
        let (a, _) = histories();
        let pp = PrivacyParams::new(1.0, 1e-5, 0.0, 1.0).unwrap();
        let attn = get_priv_attn(&refs(&a), &pp, &m, Activation::Softplus, &mut rng_from_seed(1)).unwrap();
        let emb = vdp_embed(&refs(&a), &pp, &m, &mut rng_from_seed(1)).unwrap();
        assert_eq!(attn.coeffs().len(), 5);
        assert_eq!(emb.len(), 64);
        // at equal (ε, θ) the per-coordinate scale is shared, so noise energy scales with size
        let sigma = amplified_gaussian_sigma(&pp, 1.0).unwrap();
        let mut rng = rng_from_seed(2);
        let energy = |n: usize, rng: &mut SimRng| -> f64 {
            (0..20_000)
                .map(|_| crate::dp::gaussian_noise(n, sigma, rng).iter().map(|x| x * x).sum::<f64>())
                .sum()
        };
        let ratio = energy(64, &mut rng) / energy(5, &mut rng);
        assert!((ratio / (64.0 / 5.0) - 1.0).abs() < 0.03, "{ratio}");
    }
}
