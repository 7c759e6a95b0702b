//! Full forward pass for one training sample, recorded for hand-derived backprop.
//!
//! Randomness (padding mask and attention noise) is drawn up front into
//! [`ForwardNoise`], so the forward pass is a deterministic function of the
//! parameters. The additive noise is a constant in the graph; gradients flow
//! through the pre-noise attention and the exact activation/normalisation.

use crate::dp::{positive_normalize, Activation};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, softmax, softmax_backward};

use super::attention::{attention_logits, reconstruct_user};
use super::loss::{positive_index, score_and_loss};
use super::news::{encode_news_traced, news_backward, NewsTrace};
use super::params::ModelParams;
use super::user::{encode_user_traced, user_backward, UserTrace};

/// How the scoring vector is derived from the user embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UserPath {
    /// Score candidates with `u` directly.
    Direct,
    /// Decompose onto the basis, clip, perturb, renormalise and reconstruct.
    Decomposed {
        clip_norm: f64,
        activation: Activation,
    },
}

/// Token sequences and one-hot labels for one local training sample.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub history: Vec<&'a [u32]>,
    pub candidates: Vec<&'a [u32]>,
    pub labels: Vec<u8>,
}

/// Random draws consumed by one forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardNoise {
    /// `true` replaces the history item with the anonymous embedding.
    pub pad_mask: Vec<bool>,
    /// Additive noise on the clipped attention; empty means none.
    pub attn_noise: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct DecompTrace {
    alpha: Vec<f64>,
    pre_clip_norm: f64,
    clip_norm: f64,
    noisy: Vec<f64>,
    activation: Activation,
    activated_total: f64,
    pub(crate) private_attention: Vec<f64>,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct Tape {
    history: Vec<Option<NewsTrace>>,
    anonymous: Option<NewsTrace>,
    user: UserTrace,
    decomp: Option<DecompTrace>,
    pub(crate) u_hat: Vec<f64>,
    candidates: Vec<NewsTrace>,
    pub scores: Vec<f64>,
    labels: Vec<u8>,
    pub loss: f64,
}

impl Tape {
    pub fn user_embedding(&self) -> &[f64] {
        &self.user.output
    }

    /// The perturbed attention vector, for the decomposed path.
    pub fn private_attention(&self) -> Option<&[f64]> {
        self.decomp.as_ref().map(|d| d.private_attention.as_slice())
    }
}

pub fn forward(
    params: &ModelParams,
    sample: &Sample<'_>,
    path: UserPath,
    noise: &ForwardNoise,
) -> Result<Tape> {
    if sample.history.is_empty() {
        return Err(Error::invalid("sample has no history"));
    }
    let pad_mask: Vec<bool> = if noise.pad_mask.is_empty() {
        vec![false; sample.history.len()]
    } else if noise.pad_mask.len() == sample.history.len() {
        noise.pad_mask.clone()
    } else {
        return Err(Error::invalid("padding mask length differs from history length"));
    };
    positive_index(&sample.labels)?;
    if sample.labels.len() != sample.candidates.len() {
        return Err(Error::invalid("labels and candidates differ in length"));
    }

    let anonymous = if pad_mask.iter().any(|&m| m) {
        let len = sample.history[0].len();
        Some(encode_news_traced(&params.news, &vec![0; len])?)
    } else {
        None
    };
    let mut history = Vec::with_capacity(sample.history.len());
    let mut inputs = Vec::with_capacity(sample.history.len());
    for (tokens, &pad) in sample.history.iter().zip(&pad_mask) {
        if pad {
            inputs.push(anonymous.as_ref().expect("anonymous trace").output.clone());
            history.push(None);
        } else {
            let tr = encode_news_traced(&params.news, tokens)?;
            inputs.push(tr.output.clone());
            history.push(Some(tr));
        }
    }
    let user = encode_user_traced(&params.user, &inputs)?;

    let (decomp, u_hat) = match path {
        UserPath::Direct => (None, user.output.clone()),
        UserPath::Decomposed {
            clip_norm,
            activation,
        } => {
            let alpha = softmax(&attention_logits(&user.output, &params.basis));
            let pre_clip_norm = norm2(&alpha);
            let mut noisy = alpha.clone();
            if pre_clip_norm > clip_norm {
                let s = clip_norm / pre_clip_norm;
                noisy.iter_mut().for_each(|x| *x *= s);
            }
            if !noise.attn_noise.is_empty() {
                if noise.attn_noise.len() != noisy.len() {
                    return Err(Error::invalid("attention noise length differs from B"));
                }
                noisy.iter_mut().zip(&noise.attn_noise).for_each(|(x, n)| *x += n);
            }
            let activated_total: f64 = noisy.iter().map(|&x| activation.apply(x)).sum();
            let private_attention = positive_normalize(&noisy, activation);
            let u_hat = reconstruct_user(&private_attention, &params.basis);
            (
                Some(DecompTrace {
                    alpha,
                    pre_clip_norm,
                    clip_norm,
                    noisy,
                    activation,
                    activated_total,
                    private_attention,
                }),
                u_hat,
            )
        }
    };

    let candidates = sample
        .candidates
        .iter()
        .map(|t| encode_news_traced(&params.news, t))
        .collect::<Result<Vec<_>>>()?;
    let cand_embs: Vec<Vec<f64>> = candidates.iter().map(|c| c.output.clone()).collect();
    let (scores, loss) = score_and_loss(&u_hat, &cand_embs, &sample.labels)?;

    Ok(Tape {
        history,
        anonymous,
        user,
        decomp,
        u_hat,
        candidates,
        scores,
        labels: sample.labels.clone(),
        loss,
    })
}

/// `∂L/∂Θ` for every parameter block, in the same layout as the parameters.
pub fn backward(params: &ModelParams, tape: &Tape) -> ModelParams {
    let mut grads = ModelParams::zeros(params.dims());

    // cross-entropy over dot-product scores
    let probs = softmax(&tape.scores);
    let d_scores: Vec<f64> = probs
        .iter()
        .zip(&tape.labels)
        .map(|(p, &y)| p - f64::from(y))
        .collect();
    let mut d_u_hat = vec![0.0; tape.u_hat.len()];
    for (cand, &ds) in tape.candidates.iter().zip(&d_scores) {
        axpy(&mut d_u_hat, ds, &cand.output);
        let d_r: Vec<f64> = tape.u_hat.iter().map(|x| ds * x).collect();
        news_backward(&params.news, cand, &d_r, &mut grads.news);
    }

    let d_user = match &tape.decomp {
        None => d_u_hat,
        Some(dt) => decomposition_backward(params, tape, dt, &d_u_hat, &mut grads),
    };

    let d_inputs = user_backward(&params.user, &tape.user, &d_user, &mut grads.user);
    let mut d_anonymous = vec![0.0; d_user.len()];
    for (trace, d_r) in tape.history.iter().zip(&d_inputs) {
        match trace {
            Some(tr) => news_backward(&params.news, tr, d_r, &mut grads.news),
            None => axpy(&mut d_anonymous, 1.0, d_r),
        }
    }
    if let Some(anon) = &tape.anonymous {
        news_backward(&params.news, anon, &d_anonymous, &mut grads.news);
    }
    grads
}

pub fn backward_flat(params: &ModelParams, tape: &Tape) -> Vec<f64> {
    backward(params, tape).flatten()
}

fn decomposition_backward(
    params: &ModelParams,
    tape: &Tape,
    dt: &DecompTrace,
    d_u_hat: &[f64],
    grads: &mut ModelParams,
) -> Vec<f64> {
    let basis = &params.basis.basis;
    let b = basis.rows();
    // ǔ = Σ α̃_i b_i
    let d_tilde: Vec<f64> = (0..b).map(|i| dot(basis.row(i), d_u_hat)).collect();
    for (i, &a) in dt.private_attention.iter().enumerate() {
        axpy(grads.basis.basis.row_mut(i), a, d_u_hat);
    }
    // α̃ = act(z) / Σ act(z); the uniform fallback is constant
    let d_noisy: Vec<f64> = if dt.activated_total > 0.0 {
        let inner = dot(&dt.private_attention, &d_tilde);
        dt.noisy
            .iter()
            .zip(&d_tilde)
            .map(|(&z, &g)| (g - inner) / dt.activated_total * dt.activation.derivative(z))
            .collect()
    } else {
        vec![0.0; b]
    };
    // clip: θ α / ‖α‖ when active
    let d_alpha: Vec<f64> = if dt.pre_clip_norm > dt.clip_norm {
        let n = dt.pre_clip_norm;
        let proj = dot(&dt.alpha, &d_noisy) / (n * n);
        dt.alpha
            .iter()
            .zip(&d_noisy)
            .map(|(&a, &g)| dt.clip_norm / n * (g - a * proj))
            .collect()
    } else {
        d_noisy
    };
    let d_logits = softmax_backward(&dt.alpha, &d_alpha);
    let scale = 1.0 / (basis.cols() as f64).sqrt();
    let u = tape.user_embedding();
    let mut d_user = vec![0.0; u.len()];
    for (i, &dl) in d_logits.iter().enumerate() {
        axpy(grads.basis.basis.row_mut(i), dl * scale, u);
        axpy(&mut d_user, dl * scale, basis.row(i));
    }
    d_user
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::rng::rng_from_seed;

    fn setup() -> (ModelParams, Vec<Vec<u32>>, Vec<Vec<u32>>) {
        let dims = ModelDims {
            vocab_size: 20,
            token_dim: 8,
            dim: 8,
            num_basis: 3,
        };
        let p = ModelParams::init(dims, &mut rng_from_seed(1)).unwrap();
        let history = vec![vec![1, 2, 3, 0], vec![4, 5, 6, 7], vec![2, 8, 0, 0]];
        let cands = vec![vec![9, 10, 0, 0], vec![3, 11, 12, 0], vec![13, 1, 0, 0]];
        (p, history, cands)
    }

    fn sample<'a>(h: &'a [Vec<u32>], c: &'a [Vec<u32>], labels: Vec<u8>) -> Sample<'a> {
        Sample {
            history: h.iter().map(Vec::as_slice).collect(),
            candidates: c.iter().map(Vec::as_slice).collect(),
            labels,
        }
    }

    #[test]
    fn unused_vocabulary_rows_get_exactly_zero() {
        let (p, h, c) = setup();
        let s = sample(&h, &c, vec![0, 1, 0]);
        let paths = [
            UserPath::Direct,
            UserPath::Decomposed {
                clip_norm: 1.0,
                activation: Activation::Relu,
            },
        ];
        for path in paths {
            let tape = forward(&p, &s, path, &ForwardNoise::default()).unwrap();
            let g = backward(&p, &tape);
            for row in 14..20 {
                assert!(g.news.token_embeddings.row(row).iter().all(|&x| x == 0.0));
            }
            // the pad token is used by short titles
            assert!(g.news.token_embeddings.row(0).iter().any(|&x| x != 0.0));
        }
    }

    #[test]
    fn saturated_loss_has_zero_gradient() {
        let (mut p, h, c) = setup();
        let probe = forward(&p, &sample(&h, &c, vec![1, 0, 0]), UserPath::Direct, &ForwardNoise::default()).unwrap();
        let best = (0..3).max_by(|&a, &b| probe.scores[a].total_cmp(&probe.scores[b])).unwrap();
        let mut labels = vec![0; 3];
        labels[best] = 1;
        // scaling the projection scales every score by the square of the factor
        p.news.projection.as_mut_slice().iter_mut().for_each(|x| *x *= 1e4);
        let tape = forward(&p, &sample(&h, &c, labels), UserPath::Direct, &ForwardNoise::default()).unwrap();
        assert!(tape.loss < 1e-8, "loss {}", tape.loss);
        let g = backward_flat(&p, &tape);
        assert!(g.iter().all(|x| x.abs() < 1e-8));
    }

    #[test]
    fn relu_all_zero_fallback_is_uniform_with_zero_attention_gradient() {
        let (p, h, c) = setup();
        let s = sample(&h, &c, vec![1, 0, 0]);
        let path = UserPath::Decomposed {
            clip_norm: 1.0,
            activation: Activation::Relu,
        };
        let noise = ForwardNoise {
            pad_mask: vec![],
            attn_noise: vec![-5.0; 3],
        };
        let tape = forward(&p, &s, path, &noise).unwrap();
        assert_eq!(tape.private_attention().unwrap(), &[1.0 / 3.0; 3]);
        let g = backward(&p, &tape);
        // nothing upstream of the attention receives gradient
        assert!(g.user.attn_proj.as_slice().iter().all(|&x| x == 0.0));
        assert!(g.news.token_embeddings.row(7).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_rejects_malformed_inputs() {
        let (p, h, c) = setup();
        let bad_mask = ForwardNoise {
            pad_mask: vec![true],
            attn_noise: vec![],
        };
        assert!(forward(&p, &sample(&h, &c, vec![1, 0, 0]), UserPath::Direct, &bad_mask).is_err());
        assert!(forward(&p, &sample(&h, &c, vec![1, 1, 0]), UserPath::Direct, &ForwardNoise::default()).is_err());
        assert!(forward(&p, &sample(&[], &c, vec![1, 0, 0]), UserPath::Direct, &ForwardNoise::default()).is_err());
    }
}
