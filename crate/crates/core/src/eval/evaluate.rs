//! End-to-end serving evaluation: each validation log plays a client that
//! builds a payload, and the server ranks the log's candidates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BehaviorLog, NewsIdx, NewsTable};
use crate::dp::{Activation, PrivacyParams};
use crate::error::Result;
use crate::model::ModelParams;
use crate::rng::child_rng;
use crate::serving::{
    get_priv_attn, vdp_embed, CandidateCache, Payload, ServingMode, ServingRequest, ServingResponse,
};

use super::metrics::{compute_metrics, ImpressionMetrics, MetricSummary};

const EVAL_STREAM: u64 = 3;

/// How the client protects its serving payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServingSpec {
    pub mode: ServingMode,
    pub privacy: PrivacyParams,
    pub activation: Activation,
}

impl ServingSpec {
    /// Noiseless serving without padding. The attention vector is released
    /// as is: relu followed by renormalisation is the identity on the simplex,
    /// whereas softplus would pull it towards uniform.
    pub fn noiseless(mode: ServingMode, clip_norm: f64) -> Self {
        ServingSpec {
            mode,
            privacy: PrivacyParams {
                epsilon: f64::INFINITY,
                delta: 1e-5,
                pad_prob: 0.0,
                clip_norm,
            },
            activation: Activation::Relu,
        }
    }
}

/// Client side of one request.
pub fn client_payload(
    model: &ModelParams,
    news: &NewsTable,
    history: &[NewsIdx],
    spec: &ServingSpec,
    rng: &mut crate::rng::SimRng,
) -> Result<Payload> {
    let tokens: Vec<&[u32]> = history.iter().map(|&n| news.tokens(n)).collect();
    Ok(match spec.mode {
        ServingMode::PrivateRec => {
            Payload::PrivateRec(get_priv_attn(&tokens, &spec.privacy, model, spec.activation, rng)?)
        }
        ServingMode::Vdp => Payload::Vdp(vdp_embed(&tokens, &spec.privacy, model, rng)?),
    })
}

pub struct ServingEval {
    pub summary: MetricSummary,
    pub per_impression: Vec<ImpressionMetrics>,
}

/// Metrics of `spec` over `logs`, averaged over `repeats` independent payload draws.
///
/// The stream of log `i` in repeat `r` is derived from `(seed, r, i)`.
pub fn evaluate_serving(
    model: &ModelParams,
    news: &NewsTable,
    cache: &CandidateCache,
    logs: &[BehaviorLog],
    spec: &ServingSpec,
    seed: u64,
    repeats: usize,
) -> Result<ServingEval> {
    let repeats = repeats.max(1);
    let per_impression = (0..repeats)
        .flat_map(|r| (0..logs.len()).map(move |i| (r, i)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(r, i)| {
            let log = &logs[i];
            let mut rng = child_rng(seed, &[EVAL_STREAM, r as u64, i as u64]);
            let payload = client_payload(model, news, &log.history, spec, &mut rng)?;
            let cands: Vec<NewsIdx> = log.impressions.iter().map(|(n, _)| *n).collect();
            let scores = cache.score(&payload, &cands)?;
            compute_metrics(&scores, &log.labels())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ServingEval {
        summary: MetricSummary::from_impressions(&per_impression),
        per_impression,
    })
}

/// Request/response records for a batch of logs, in log order.
pub fn serve_batch(
    model: &ModelParams,
    news: &NewsTable,
    cache: &CandidateCache,
    logs: &[BehaviorLog],
    spec: &ServingSpec,
    seed: u64,
) -> Result<Vec<(ServingRequest, ServingResponse)>> {
    logs.par_iter()
        .enumerate()
        .map(|(i, log)| {
            let mut rng = child_rng(seed, &[EVAL_STREAM, 0, i as u64]);
            let payload = client_payload(model, news, &log.history, spec, &mut rng)?;
            let candidates = log
                .impressions
                .iter()
                .map(|(n, _)| news.get(*n).news_id.clone())
                .collect();
            let request = ServingRequest::new(format!("{i}:{}", log.user_id), &payload, candidates);
            let response = cache.respond(&request)?;
            Ok((request, response))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::{encode_user, ModelDims};
    use crate::rng::rng_from_seed;

    fn setup() -> (crate::data::SynthDataset, ModelParams, CandidateCache) {
        let data = synth_generate(
            &SynthConfig {
                num_users: 30,
                num_news: 60,
                ..SynthConfig::default()
            },
            3,
        )
        .unwrap();
        let dims = ModelDims {
            vocab_size: data.dataset.vocab.len(),
            token_dim: 8,
            dim: 8,
            num_basis: 3,
        };
        let model = ModelParams::init(dims, &mut rng_from_seed(1)).unwrap();
        let cache = CandidateCache::build(&model, &data.dataset.news).unwrap();
        (data, model, cache)
    }

    #[test]
    fn noiseless_vdp_ranks_by_user_embedding() {
        let (data, model, cache) = setup();
        let news = &data.dataset.news;
        let log = &data.dataset.logs[0];
        let spec = ServingSpec::noiseless(ServingMode::Vdp, 0.001);
        let payload = client_payload(&model, news, &log.history, &spec, &mut rng_from_seed(0)).unwrap();
        let embs: Vec<Vec<f64>> = log
            .history
            .iter()
            .map(|&n| crate::model::encode_news(&model.news, news.tokens(n)).unwrap())
            .collect();
        let u = encode_user(&model.user, &embs).unwrap();
        let cands: Vec<NewsIdx> = log.impressions.iter().map(|x| x.0).collect();
        let a = crate::eval::rank_order(&cache.score(&payload, &cands).unwrap());
        let b = crate::eval::rank_order(&cache.score(&Payload::Vdp(u), &cands).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn batch_records_are_deterministic_and_sized() {
        let (data, model, cache) = setup();
        let mut spec = ServingSpec::noiseless(ServingMode::PrivateRec, 1.0);
        spec.privacy.epsilon = 1.0;
        let logs = &data.dataset.logs[..10];
        let a = serve_batch(&model, &data.dataset.news, &cache, logs, &spec, 5).unwrap();
        let b = serve_batch(&model, &data.dataset.news, &cache, logs, &spec, 5).unwrap();
        assert_eq!(a, b);
        for (req, resp) in &a {
            assert_eq!(req.payload.len(), 3);
            assert_eq!(resp.ranked.len(), req.candidates.len());
        }
        let e = evaluate_serving(&model, &data.dataset.news, &cache, logs, &spec, 5, 2).unwrap();
        assert_eq!(e.per_impression.len(), 20);
        assert!((0.0..=1.0).contains(&e.summary.auc));
    }
}
