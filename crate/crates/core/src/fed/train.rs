//! The round loop: sample clients, run local steps in parallel, aggregate.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BehaviorLog, NewsTable};
use crate::error::{Error, Result};
use crate::eval::MetricSummary;
use crate::model::ModelParams;
use crate::rng::child_rng;

use super::client::{local_update, local_update_dpfedrec, local_update_plain, LocalResult};
use super::config::{FedConfig, TrainMode};
use super::server::{fedadam_step, FedAdamState, RoundUpdate};

const ROUND_STREAM: u64 = 1;
const CLIENT_STREAM: u64 = 2;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub mode: TrainMode,
    #[serde(with = "crate::floatfmt")]
    pub epsilon_t: f64,
    pub pad_prob: f64,
    pub clients: usize,
    pub skipped: usize,
    pub rejected: usize,
    pub mean_loss: f64,
    /// Mean L2 norm of the submitted client gradients.
    pub mean_client_grad_norm: f64,
    pub aggregate_grad_norm: f64,
    pub step_norm: f64,
    pub validation: Option<MetricSummary>,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub records: Vec<RoundRecord>,
}

/// Called after rounds that are due for validation.
pub type Validator<'a> = dyn Fn(&ModelParams) -> Result<MetricSummary> + Sync + 'a;

fn run_client(
    mode: TrainMode,
    theta: &ModelParams,
    log: &BehaviorLog,
    news: &NewsTable,
    cfg: &FedConfig,
    seed: u64,
    round: usize,
    client: usize,
) -> Result<Option<LocalResult>> {
    let mut rng = child_rng(seed, &[CLIENT_STREAM, round as u64, client as u64]);
    match mode {
        TrainMode::PrivateRec => local_update(theta, log, news, cfg, &mut rng),
        TrainMode::DpFedRec => local_update_dpfedrec(theta, log, news, cfg, &mut rng),
        TrainMode::FedRec => local_update_plain(theta, log, news, cfg, &mut rng),
    }
}

/// Run `cfg.num_rounds` rounds from `init`.
///
/// Each round samples exactly `⌊r·|U|⌋` distinct clients. Client randomness
/// is derived from `(seed, round, client)`, so the result does not depend on
/// thread scheduling. `on_round` sees every record as it is produced.
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    population: &[BehaviorLog],
    news: &NewsTable,
    init: ModelParams,
    cfg: &FedConfig,
    mode: TrainMode,
    seed: u64,
    validator: Option<&Validator<'_>>,
    on_round: &mut dyn FnMut(&RoundRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if population.is_empty() {
        return Err(Error::invalid("training population is empty"));
    }
    let m = cfg.clients_per_round(population.len())?;
    let adam = cfg.adam();
    let mut theta = init;
    let mut state = FedAdamState::new(theta.num_params());
    let mut records = Vec::with_capacity(cfg.num_rounds);

    for round in 0..cfg.num_rounds {
        let mut rng = child_rng(seed, &[ROUND_STREAM, round as u64]);
        let mut chosen = sample(&mut rng, population.len(), m).into_vec();
        chosen.sort_unstable();

        let results = chosen
            .par_iter()
            .map(|&c| run_client(mode, &theta, &population[c], news, cfg, seed, round, c))
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<LocalResult> = results.into_iter().flatten().collect();
        let skipped = m - results.len();
        let n = results.len().max(1) as f64;
        let mean_loss = results.iter().map(|r| r.loss).sum::<f64>() / n;
        let mean_client_grad_norm = results
            .iter()
            .map(|r| crate::linalg::norm2(&r.update.gradient))
            .sum::<f64>()
            / n;
        let updates: Vec<RoundUpdate> = results.into_iter().map(|r| r.update).collect();
        let report = fedadam_step(&mut theta, &updates, &mut state, &adam)?;

        let last = round + 1 == cfg.num_rounds;
        let due = last || (cfg.eval_every > 0 && (round + 1) % cfg.eval_every == 0);
        let validation = match validator {
            Some(v) if due => Some(v(&theta)?),
            _ => None,
        };
        let record = RoundRecord {
            round,
            mode,
            epsilon_t: match mode {
                TrainMode::FedRec => f64::INFINITY,
                _ => cfg.train_privacy.epsilon,
            },
            pad_prob: match mode {
                TrainMode::PrivateRec => cfg.train_privacy.pad_prob,
                _ => 0.0,
            },
            clients: m,
            skipped,
            rejected: report.rejected,
            mean_loss,
            mean_client_grad_norm,
            aggregate_grad_norm: report.mean_grad_norm,
            step_norm: report.step_norm,
            validation,
        };
        on_round(&record)?;
        records.push(record);
    }
    Ok(TrainOutcome {
        params: theta,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::ModelDims;
    use crate::rng::rng_from_seed;

    fn small() -> (crate::data::SynthDataset, ModelParams) {
        let cfg = SynthConfig {
            num_users: 60,
            num_news: 80,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg, 1).unwrap();
        let dims = ModelDims {
            vocab_size: data.dataset.vocab.len(),
            token_dim: 8,
            dim: 8,
            num_basis: 3,
        };
        let init = ModelParams::init(dims, &mut rng_from_seed(2)).unwrap();
        (data, init)
    }

    #[test]
    fn zero_rounds_returns_init() {
        let (data, init) = small();
        let cfg = FedConfig {
            num_rounds: 0,
            ..FedConfig::default()
        };
        let out = run_training(
            &data.dataset.logs,
            &data.dataset.news,
            init.clone(),
            &cfg,
            TrainMode::PrivateRec,
            0,
            None,
            &mut |_| Ok(()),
        )
        .unwrap();
        assert_eq!(out.params, init);
        assert!(out.records.is_empty());
    }

    #[test]
    fn deterministic_and_mode_dependent() {
        let (data, init) = small();
        let cfg = FedConfig {
            num_rounds: 3,
            sample_ratio: 0.1,
            ..FedConfig::default()
        };
        let run = |mode, seed| {
            run_training(
                &data.dataset.logs,
                &data.dataset.news,
                init.clone(),
                &cfg,
                mode,
                seed,
                None,
                &mut |_| Ok(()),
            )
            .unwrap()
        };
        for mode in TrainMode::ALL {
            let a = run(mode, 4);
            let b = run(mode, 4);
            assert_eq!(a.params, b.params);
            assert_eq!(a.records, b.records);
            assert_ne!(a.params, init);
            assert_eq!(a.records[0].clients, 12);
        }
        assert_ne!(run(TrainMode::PrivateRec, 4).params, run(TrainMode::PrivateRec, 5).params);
    }

    #[test]
    fn samples_distinct_clients() {
        let n = 50;
        for round in 0..20u64 {
            let mut rng = child_rng(9, &[ROUND_STREAM, round]);
            let mut v = sample(&mut rng, n, 7).into_vec();
            v.sort_unstable();
            v.dedup();
            assert_eq!(v.len(), 7);
        }
    }

    #[test]
    fn validator_runs_on_schedule() {
        let (data, init) = small();
        let cfg = FedConfig {
            num_rounds: 5,
            sample_ratio: 0.1,
            eval_every: 2,
            ..FedConfig::default()
        };
        let v = |_: &ModelParams| Ok(MetricSummary::default());
        let out = run_training(
            &data.dataset.logs,
            &data.dataset.news,
            init,
            &cfg,
            TrainMode::FedRec,
            0,
            Some(&v),
            &mut |_| Ok(()),
        )
        .unwrap();
        let due: Vec<usize> = out
            .records
            .iter()
            .filter(|r| r.validation.is_some())
            .map(|r| r.round)
            .collect();
        assert_eq!(due, vec![1, 3, 4]);
    }
}
