use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp};

/// Dot-product scores and softmax cross-entropy against a one-hot label.
pub fn score_and_loss(u_hat: &[f64], cand_embs: &[Vec<f64>], labels: &[u8]) -> Result<(Vec<f64>, f64)> {
    if cand_embs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} labels",
            cand_embs.len(),
            labels.len()
        )));
    }
    let pos = positive_index(labels)?;
    let scores: Vec<f64> = cand_embs.iter().map(|r| dot(u_hat, r)).collect();
    let loss = (log_sum_exp(&scores) - scores[pos]).max(0.0);
    Ok((scores, loss))
}

pub(crate) fn positive_index(labels: &[u8]) -> Result<usize> {
    let positives: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &y)| y == 1)
        .map(|(i, _)| i)
        .collect();
    match positives.as_slice() {
        [i] if labels.iter().all(|&y| y <= 1) => Ok(*i),
        _ => Err(Error::invalid(format!(
            "labels must be one-hot, got {} positives",
            positives.len()
        ))),
    }
}
