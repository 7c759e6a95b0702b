//! Client-side local updates. Each call is one local step on one log.

use rand::seq::index::sample;
use rand::Rng;

use crate::data::{BehaviorLog, NewsIdx, NewsTable};
use crate::dp::{
    attention_noise, clip_l2_in_place, draw_noise, laplace_noise, laplace_scale, permute_labels,
    Activation,
};
use crate::error::Result;
use crate::model::{backward_flat, draw_pad_mask, forward, ForwardNoise, ModelParams, Sample, UserPath};
use crate::rng::SimRng;

use super::config::FedConfig;
use super::server::RoundUpdate;

/// A client's contribution plus local telemetry that stays in the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalResult {
    pub update: RoundUpdate,
    pub loss: f64,
}

/// One positive and up to `k` negatives drawn without replacement, positive first.
///
/// `None` when the log has no history, no positive or no negative.
fn draw_candidates(log: &BehaviorLog, k: usize, rng: &mut SimRng) -> Option<Vec<NewsIdx>> {
    if log.history.is_empty() {
        return None;
    }
    let positives: Vec<NewsIdx> = log.positives().collect();
    let negatives: Vec<NewsIdx> = log.negatives().collect();
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    let pos = positives[rng.random_range(0..positives.len())];
    let k = k.min(negatives.len());
    let mut out = Vec::with_capacity(k + 1);
    out.push(pos);
    out.extend(sample(rng, negatives.len(), k).into_iter().map(|i| negatives[i]));
    Some(out)
}

fn sample_for<'a>(news: &'a NewsTable, log: &BehaviorLog, cands: &[NewsIdx], labels: Vec<u8>) -> Sample<'a> {
    Sample {
        history: log.history.iter().map(|&n| news.tokens(n)).collect(),
        candidates: cands.iter().map(|&n| news.tokens(n)).collect(),
        labels,
    }
}

/// The private local step: padding, private attention with the training
/// budget, label permutation, then one gradient of the cross-entropy.
///
/// Returns `None` when the log cannot form a sample (skip this client).
pub fn local_update(
    theta: &ModelParams,
    log: &BehaviorLog,
    news: &NewsTable,
    cfg: &FedConfig,
    rng: &mut SimRng,
) -> Result<Option<LocalResult>> {
    let pp = &cfg.train_privacy;
    let scale = attention_noise(pp)?;
    let Some(cands) = draw_candidates(log, cfg.num_negatives, rng) else {
        return Ok(None);
    };
    let k = cands.len() - 1;
    let pool = cfg.pool_size.unwrap_or(log.impressions.len()).max(k + 1);

    let pad_mask = draw_pad_mask(log.history.len(), pp.pad_prob, rng);
    let attn_noise = draw_noise(theta.basis.num_basis(), &scale, rng);
    let chosen = permute_labels(k + 1, pp.epsilon, pool, rng)?;
    let mut labels = vec![0u8; k + 1];
    labels[chosen] = 1;

    let sample = sample_for(news, log, &cands, labels);
    let path = UserPath::Decomposed {
        clip_norm: pp.clip_norm,
        activation: Activation::Relu,
    };
    let tape = forward(theta, &sample, path, &ForwardNoise { pad_mask, attn_noise })?;
    Ok(Some(LocalResult {
        update: RoundUpdate {
            client_id: log.user_id.clone(),
            gradient: backward_flat(theta, &tape),
            num_samples: 1,
        },
        loss: tape.loss,
    }))
}

/// The non-private local step: the user embedding scores candidates directly.
pub fn local_update_plain(
    theta: &ModelParams,
    log: &BehaviorLog,
    news: &NewsTable,
    cfg: &FedConfig,
    rng: &mut SimRng,
) -> Result<Option<LocalResult>> {
    let Some(cands) = draw_candidates(log, cfg.num_negatives, rng) else {
        return Ok(None);
    };
    let mut labels = vec![0u8; cands.len()];
    labels[0] = 1;
    let sample = sample_for(news, log, &cands, labels);
    let tape = forward(theta, &sample, UserPath::Direct, &ForwardNoise::default())?;
    Ok(Some(LocalResult {
        update: RoundUpdate {
            client_id: log.user_id.clone(),
            gradient: backward_flat(theta, &tape),
            num_samples: 1,
        },
        loss: tape.loss,
    }))
}

/// The gradient-perturbation baseline: plain gradient, clipped to
/// `cfg.dpfedrec_clip`, plus Laplace(2θ/ε_t) noise on every coordinate.
pub fn local_update_dpfedrec(
    theta: &ModelParams,
    log: &BehaviorLog,
    news: &NewsTable,
    cfg: &FedConfig,
    rng: &mut SimRng,
) -> Result<Option<LocalResult>> {
    let b = laplace_scale(2.0 * cfg.dpfedrec_clip, cfg.train_privacy.epsilon)?;
    let Some(mut res) = local_update_plain(theta, log, news, cfg, rng)? else {
        return Ok(None);
    };
    let g = &mut res.update.gradient;
    clip_l2_in_place(g, cfg.dpfedrec_clip)?;
    if b > 0.0 {
        let noise = laplace_noise(g.len(), b, rng);
        g.iter_mut().zip(noise).for_each(|(x, n)| *x += n);
    }
    Ok(Some(res))
}
