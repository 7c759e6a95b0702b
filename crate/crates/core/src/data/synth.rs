//! Planted-factor synthetic data with a known Bayes-optimal ranking.
//!
//! `B_true` unit topic vectors live in `R^{d_true}`. Each article draws a
//! sparse topic mixture, a latent vector (the mixture of topic vectors) and a
//! title whose tokens come from per-topic vocabularies plus shared filler.
//! Each user draws a topic preference; the click probability of an article is
//! `sigmoid(scale · pref · latent + bias)`. Histories are sampled from the same
//! click model, so ranking candidates by `pref · latent` is Bayes-optimal.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::rng::{child_rng, SimRng};

use super::tsv::DEFAULT_TITLE_LEN;
use super::types::{BehaviorLog, Dataset, NewsIdx, NewsTable, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_news: usize,
    /// Number of planted topics `B_true`.
    pub num_topics: usize,
    /// Dimension `d_true` of the planted latent space.
    pub latent_dim: usize,
    pub history_len: usize,
    /// Candidates per impression `C`.
    pub candidates: usize,
    pub impressions_per_user: usize,
    pub title_len: usize,
    pub tokens_per_topic: usize,
    pub filler_tokens: usize,
    /// Probability that a title token is topic-neutral filler.
    pub filler_prob: f64,
    /// Dirichlet concentration of article topic mixtures.
    pub news_concentration: f64,
    /// Dirichlet concentration of user topic preferences.
    pub user_concentration: f64,
    pub click_scale: f64,
    pub click_bias: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 2000,
            num_news: 500,
            num_topics: 3,
            latent_dim: 16,
            history_len: 10,
            candidates: 20,
            impressions_per_user: 2,
            title_len: DEFAULT_TITLE_LEN,
            tokens_per_topic: 40,
            filler_tokens: 40,
            filler_prob: 0.3,
            news_concentration: 0.2,
            user_concentration: 0.5,
            click_scale: 6.0,
            click_bias: -3.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("num_users", self.num_users),
            ("num_news", self.num_news),
            ("num_topics", self.num_topics),
            ("latent_dim", self.latent_dim),
            ("history_len", self.history_len),
            ("candidates", self.candidates),
            ("impressions_per_user", self.impressions_per_user),
            ("title_len", self.title_len),
            ("tokens_per_topic", self.tokens_per_topic),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("synthetic {name} must be >= 1")));
        }
        if self.history_len + self.candidates > self.num_news {
            return Err(Error::invalid(
                "num_news must cover history_len + candidates distinct articles",
            ));
        }
        if !(0.0..1.0).contains(&self.filler_prob) || (self.filler_prob > 0.0 && self.filler_tokens == 0) {
            return Err(Error::invalid("filler_prob must be in [0, 1) with filler tokens available"));
        }
        if !(self.news_concentration > 0.0 && self.user_concentration > 0.0) {
            return Err(Error::invalid("Dirichlet concentrations must be > 0"));
        }
        Ok(())
    }
}

/// The generating parameters, sufficient to score any (user, article) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    pub topic_vectors: Vec<Vec<f64>>,
    pub news_mixtures: Vec<Vec<f64>>,
    pub news_latent: Vec<Vec<f64>>,
    pub user_prefs: BTreeMap<String, Vec<f64>>,
    pub click_scale: f64,
    pub click_bias: f64,
}

impl PlantedModel {
    /// `pref · latent`; monotone in click probability.
    pub fn affinity(&self, user_id: &str, news: NewsIdx) -> Option<f64> {
        let pref = self.user_prefs.get(user_id)?;
        Some(dot(pref, &self.news_latent[news.get()]))
    }

    pub fn click_prob(&self, user_id: &str, news: NewsIdx) -> Option<f64> {
        self.affinity(user_id, news)
            .map(|a| sigmoid(self.click_scale * a + self.click_bias))
    }

    /// Bayes-optimal scores for every candidate of a log.
    pub fn scores(&self, log: &BehaviorLog) -> Result<Vec<f64>> {
        log.impressions
            .iter()
            .map(|&(n, _)| {
                self.affinity(&log.user_id, n)
                    .ok_or_else(|| Error::invalid(format!("unknown user {}", log.user_id)))
            })
            .collect()
    }

    /// Expected AUC of the Bayes ranking in closed form.
    ///
    /// Per impression this is `Σ_{i≠j} q_i (1 - q_j) H(s_i - s_j) / Σ_{i≠j} q_i (1 - q_j)`
    /// with `H` the step function taking 1/2 at ties; impressions are then
    /// macro-averaged. Conditioning on at least one click cancels in the ratio.
    pub fn expected_bayes_auc(&self, logs: &[BehaviorLog]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for log in logs {
            let s = self.scores(log)?;
            let q: Vec<f64> = log
                .impressions
                .iter()
                .map(|&(c, _)| self.click_prob(&log.user_id, c).expect("known user"))
                .collect();
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..s.len() {
                for j in 0..s.len() {
                    if i == j {
                        continue;
                    }
                    let w = q[i] * (1.0 - q[j]);
                    den += w;
                    num += w * step(s[i] - s[j]);
                }
            }
            if den > 0.0 {
                total += num / den;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::invalid("no impression admits an AUC"));
        }
        Ok(total / n as f64)
    }

    /// Monte-Carlo estimate of [`Self::expected_bayes_auc`] by resampling labels.
    pub fn monte_carlo_bayes_auc(
        &self,
        logs: &[BehaviorLog],
        resamples: usize,
        rng: &mut SimRng,
    ) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for log in logs {
            let s = self.scores(log)?;
            let q: Vec<f64> = log
                .impressions
                .iter()
                .map(|&(c, _)| self.click_prob(&log.user_id, c).expect("known user"))
                .collect();
            let (mut concordant, mut pairs) = (0.0, 0.0);
            for _ in 0..resamples {
                let y: Vec<bool> = q.iter().map(|&p| rng.random::<f64>() < p).collect();
                for i in 0..s.len() {
                    if !y[i] {
                        continue;
                    }
                    for j in 0..s.len() {
                        if !y[j] {
                            pairs += 1.0;
                            concordant += step(s[i] - s[j]);
                        }
                    }
                }
            }
            if pairs > 0.0 {
                total += concordant / pairs;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::invalid("no impression admits an AUC"));
        }
        Ok(total / n as f64)
    }
}

fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x == 0.0 {
        0.5
    } else {
        0.0
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub seed: u64,
    pub dataset: Dataset,
    pub planted: PlantedModel,
}

fn dirichlet(concentration: f64, k: usize, rng: &mut SimRng) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let g: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 {
            return g.into_iter().map(|x| x / total).collect();
        }
    }
}

fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Generate a dataset and the planted parameters that produced it.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<SynthDataset> {
    cfg.validate()?;
    let topics = cfg.num_topics;

    let mut rng = child_rng(seed, &[0]);
    let topic_vectors: Vec<Vec<f64>> = (0..topics)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.latent_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let n = dot(&v, &v).sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();

    // vocabulary: per-topic tokens first, then filler
    let mut vocab = Vocab::new();
    let topic_tokens: Vec<Vec<u32>> = (0..topics)
        .map(|t| {
            (0..cfg.tokens_per_topic)
                .map(|j| vocab.intern(&format!("t{t}w{j}")))
                .collect()
        })
        .collect();
    let filler: Vec<u32> = (0..cfg.filler_tokens)
        .map(|j| vocab.intern(&format!("filler{j}")))
        .collect();

    let mut rng = child_rng(seed, &[1]);
    let mut news = NewsTable::new(cfg.title_len);
    let mut news_mixtures = Vec::with_capacity(cfg.num_news);
    let mut news_latent = Vec::with_capacity(cfg.num_news);
    let min_len = cfg.title_len.div_ceil(2);
    for i in 0..cfg.num_news {
        let mix = dirichlet(cfg.news_concentration, topics, &mut rng);
        let mut latent = vec![0.0; cfg.latent_dim];
        for (w, phi) in mix.iter().zip(&topic_vectors) {
            crate::linalg::axpy(&mut latent, *w, phi);
        }
        let len = rng.random_range(min_len..=cfg.title_len);
        let tokens: Vec<u32> = (0..len)
            .map(|_| {
                if rng.random::<f64>() < cfg.filler_prob {
                    filler[rng.random_range(0..filler.len())]
                } else {
                    let t = sample_categorical(&mix, &mut rng);
                    topic_tokens[t][rng.random_range(0..cfg.tokens_per_topic)]
                }
            })
            .collect();
        news.push(&format!("N{i:05}"), tokens)?;
        news_mixtures.push(mix);
        news_latent.push(latent);
    }

    let mut planted = PlantedModel {
        topic_vectors,
        news_mixtures,
        news_latent,
        user_prefs: BTreeMap::new(),
        click_scale: cfg.click_scale,
        click_bias: cfg.click_bias,
    };

    let mut logs = Vec::with_capacity(cfg.num_users * cfg.impressions_per_user);
    for u in 0..cfg.num_users {
        let mut rng = child_rng(seed, &[2, u as u64]);
        let user_id = format!("U{u:05}");
        let rho = dirichlet(cfg.user_concentration, topics, &mut rng);
        let mut pref = vec![0.0; cfg.latent_dim];
        for (w, phi) in rho.iter().zip(&planted.topic_vectors) {
            crate::linalg::axpy(&mut pref, *w, phi);
        }
        planted.user_prefs.insert(user_id.clone(), pref);
        let click = |n: usize| planted.click_prob(&user_id, NewsIdx(n as u32)).expect("user");

        // history: clicked articles under the same click model
        let mut history = Vec::with_capacity(cfg.history_len);
        let mut seen = HashSet::new();
        let mut attempts = 0usize;
        while history.len() < cfg.history_len {
            let n = rng.random_range(0..cfg.num_news);
            attempts += 1;
            let accept = attempts > 1000 * cfg.history_len || rng.random::<f64>() < click(n);
            if accept && seen.insert(n) {
                history.push(NewsIdx(n as u32));
            }
        }

        for _ in 0..cfg.impressions_per_user {
            let mut impressions = Vec::new();
            for _ in 0..100 {
                let mut cand = HashSet::new();
                impressions.clear();
                while impressions.len() < cfg.candidates {
                    let n = rng.random_range(0..cfg.num_news);
                    if seen.contains(&n) || !cand.insert(n) {
                        continue;
                    }
                    let y = u8::from(rng.random::<f64>() < click(n));
                    impressions.push((NewsIdx(n as u32), y));
                }
                if impressions.iter().any(|(_, y)| *y == 1) {
                    break;
                }
            }
            if !impressions.iter().any(|(_, y)| *y == 1) {
                // vanishing click rate: mark the most affine candidate
                let best = (0..impressions.len())
                    .max_by(|&a, &b| {
                        click(impressions[a].0.get()).total_cmp(&click(impressions[b].0.get()))
                    })
                    .expect("non-empty");
                impressions[best].1 = 1;
            }
            logs.push(BehaviorLog {
                user_id: user_id.clone(),
                history: history.clone(),
                impressions,
            });
        }
    }

    let dataset = Dataset { vocab, news, logs };
    dataset.check()?;
    Ok(SynthDataset {
        config: cfg.clone(),
        seed,
        dataset,
        planted,
    })
}

impl SynthDataset {
    pub fn save_snapshot(&self, path: &std::path::Path) -> Result<()> {
        let body = serde_json::to_string(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load_snapshot(path: &std::path::Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut snap: SynthDataset = serde_json::from_str(&body)?;
        snap.dataset.rebuild_indices();
        Ok(snap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_users: 200,
            num_news: 120,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = synth_generate(&small(), 5).unwrap();
        let b = synth_generate(&small(), 5).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = synth_generate(&small(), 6).unwrap();
        assert_ne!(a.dataset.logs, c.dataset.logs);
    }

    #[test]
    fn shapes_and_invariants() {
        let cfg = small();
        let s = synth_generate(&cfg, 1).unwrap();
        assert_eq!(s.dataset.logs.len(), cfg.num_users * cfg.impressions_per_user);
        for log in &s.dataset.logs {
            assert_eq!(log.history.len(), cfg.history_len);
            assert_eq!(log.impressions.len(), cfg.candidates);
            assert!(log.positives().count() >= 1);
        }
        s.dataset.check().unwrap();
        // id 0 only ever appears as title padding
        for a in s.dataset.news.articles() {
            let real = a.token_ids.iter().take_while(|&&t| t != 0).count();
            assert!(real >= cfg.title_len / 2);
            assert!(a.token_ids[real..].iter().all(|&t| t == 0));
        }
    }

    #[test]
    fn aligned_preference_ranks_its_topic_first() {
        let s = synth_generate(&small(), 2).unwrap();
        let mut planted = s.planted.clone();
        // pure-topic articles and a user aligned to topic 1
        planted.news_latent = planted.topic_vectors.clone();
        planted
            .user_prefs
            .insert("probe".into(), planted.topic_vectors[1].clone());
        let log = BehaviorLog {
            user_id: "probe".into(),
            history: vec![NewsIdx(0)],
            impressions: (0..3).map(|t| (NewsIdx(t), 0)).collect(),
        };
        let scores = planted.scores(&log).unwrap();
        let best = (0..3).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        assert_eq!(best, 1);
    }

    #[test]
    fn bayes_auc_routes_agree() {
        let s = synth_generate(&small(), 3).unwrap();
        let closed = s.planted.expected_bayes_auc(&s.dataset.logs).unwrap();
        let mc = s
            .planted
            .monte_carlo_bayes_auc(&s.dataset.logs, 400, &mut child_rng(9, &[]))
            .unwrap();
        assert!((closed - mc).abs() < 0.005, "closed {closed} vs mc {mc}");
        assert!(closed > 0.5);
    }

    #[test]
    fn snapshot_round_trip() {
        let s = synth_generate(&small(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.json");
        s.save_snapshot(&path).unwrap();
        let back = SynthDataset::load_snapshot(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.dataset.news.resolve("N00003"), Some(NewsIdx(3)));
    }
}
