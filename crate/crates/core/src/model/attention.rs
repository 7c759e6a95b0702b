use rand::Rng;

use crate::linalg::{axpy, dot, softmax};
use crate::rng::SimRng;

use super::params::BasisTable;

/// `α = softmax(B u / √d)` over the basis rows.
pub fn decompose_attention(u: &[f64], basis: &BasisTable) -> Vec<f64> {
    softmax(&attention_logits(u, basis))
}

pub(crate) fn attention_logits(u: &[f64], basis: &BasisTable) -> Vec<f64> {
    let scale = 1.0 / (basis.dim() as f64).sqrt();
    (0..basis.num_basis())
        .map(|i| dot(basis.basis.row(i), u) * scale)
        .collect()
}

/// `ǔ = Σ_i α_i b_i`.
pub fn reconstruct_user(alpha: &[f64], basis: &BasisTable) -> Vec<f64> {
    debug_assert_eq!(alpha.len(), basis.num_basis());
    let mut out = vec![0.0; basis.dim()];
    for (i, &a) in alpha.iter().enumerate() {
        axpy(&mut out, a, basis.basis.row(i));
    }
    out
}

/// Independent Bernoulli(p) padding decisions for `h` history positions.
pub fn draw_pad_mask(h: usize, p: f64, rng: &mut SimRng) -> Vec<bool> {
    (0..h).map(|_| rng.random::<f64>() < p).collect()
}

/// Replace each embedding by `r0` with probability `p`.
pub fn pad_behaviors(news_embs: &[Vec<f64>], r0: &[f64], p: f64, rng: &mut SimRng) -> Vec<Vec<f64>> {
    let mask = draw_pad_mask(news_embs.len(), p, rng);
    news_embs
        .iter()
        .zip(mask)
        .map(|(r, pad)| if pad { r0.to_vec() } else { r.clone() })
        .collect()
}
