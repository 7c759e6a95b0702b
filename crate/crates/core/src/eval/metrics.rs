//! Per-impression ranking metrics and their macro average.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics of one impression. `None` where the metric is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpressionMetrics {
    /// Needs at least one positive and one negative.
    pub auc: Option<f64>,
    pub mrr: Option<f64>,
    pub ndcg5: Option<f64>,
    pub ndcg10: Option<f64>,
}

/// Candidate positions sorted by descending score; ties keep ascending position.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn ndcg_at(order: &[usize], labels: &[u8], k: usize) -> f64 {
    let dcg: f64 = order
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &i)| labels[i] == 1)
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let idcg: f64 = (0..positives.min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    dcg / idcg
}

pub fn compute_metrics(scores: &[f64], labels: &[u8]) -> Result<ImpressionMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite score"));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Ok(ImpressionMetrics {
            auc: None,
            mrr: None,
            ndcg5: None,
            ndcg10: None,
        });
    }
    let negatives = labels.len() - positives;
    let auc = (negatives > 0).then(|| {
        let mut wins = 0.0;
        for (sp, _) in scores.iter().zip(labels).filter(|(_, &y)| y == 1) {
            for (sn, _) in scores.iter().zip(labels).filter(|(_, &y)| y == 0) {
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
        wins / (positives * negatives) as f64
    });
    let order = rank_order(scores);
    let first = order.iter().position(|&i| labels[i] == 1).expect("has a positive");
    Ok(ImpressionMetrics {
        auc,
        mrr: Some(1.0 / (first + 1) as f64),
        ndcg5: Some(ndcg_at(&order, labels, 5)),
        ndcg10: Some(ndcg_at(&order, labels, 10)),
    })
}

/// Macro average over impressions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub n_impressions: usize,
    /// Impressions that contributed to AUC.
    pub n_auc: usize,
}

impl MetricSummary {
    pub fn from_impressions(items: &[ImpressionMetrics]) -> Self {
        let mean = |f: &dyn Fn(&ImpressionMetrics) -> Option<f64>| {
            let vals: Vec<f64> = items.iter().filter_map(f).collect();
            let n = vals.len();
            (if n == 0 { 0.0 } else { vals.iter().sum::<f64>() / n as f64 }, n)
        };
        let (auc, n_auc) = mean(&|m| m.auc);
        let (mrr, n_impressions) = mean(&|m| m.mrr);
        MetricSummary {
            auc,
            mrr,
            ndcg5: mean(&|m| m.ndcg5).0,
            ndcg10: mean(&|m| m.ndcg10).0,
            n_impressions,
            n_auc,
        }
    }
}
