use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, softmax, softmax_backward};

use super::params::UserEncoderParams;

#[derive(Debug, Clone)]
pub struct UserTrace {
    pub(crate) inputs: Vec<Vec<f64>>,
    pub(crate) hidden: Vec<Vec<f64>>,
    pub(crate) weights: Vec<f64>,
    pub output: Vec<f64>,
}

/// Attention-pool `H` news embeddings into a user embedding.
pub fn encode_user(params: &UserEncoderParams, news_embs: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(encode_user_traced(params, news_embs)?.output)
}

pub(crate) fn encode_user_traced(
    params: &UserEncoderParams,
    news_embs: &[Vec<f64>],
) -> Result<UserTrace> {
    if news_embs.is_empty() {
        return Err(Error::invalid("user history is empty"));
    }
    let d = params.attn_query.len();
    if let Some(bad) = news_embs.iter().find(|r| r.len() != d) {
        return Err(Error::invalid(format!(
            "news embedding has dimension {}, expected {d}",
            bad.len()
        )));
    }
    let hidden: Vec<Vec<f64>> = news_embs
        .iter()
        .map(|r| params.attn_proj.matvec(r).into_iter().map(f64::tanh).collect())
        .collect();
    let scores: Vec<f64> = hidden.iter().map(|h| dot(&params.attn_query, h)).collect();
    let weights = softmax(&scores);
    let mut output = vec![0.0; d];
    for (r, &w) in news_embs.iter().zip(&weights) {
        axpy(&mut output, w, r);
    }
    Ok(UserTrace {
        inputs: news_embs.to_vec(),
        hidden,
        weights,
        output,
    })
}

/// Backpropagate `d_out` through the user encoder; returns `dL/dr_i` per input.
pub(crate) fn user_backward(
    params: &UserEncoderParams,
    trace: &UserTrace,
    d_out: &[f64],
    grads: &mut UserEncoderParams,
) -> Vec<Vec<f64>> {
    let d_weights: Vec<f64> = trace.inputs.iter().map(|r| dot(r, d_out)).collect();
    let d_scores = softmax_backward(&trace.weights, &d_weights);
    trace
        .inputs
        .iter()
        .zip(&trace.hidden)
        .zip(trace.weights.iter().zip(&d_scores))
        .map(|((r, h), (&w, &ds))| {
            axpy(&mut grads.attn_query, ds, h);
            let d_pre: Vec<f64> = h
                .iter()
                .zip(&params.attn_query)
                .map(|(hj, qj)| ds * qj * (1.0 - hj * hj))
                .collect();
            grads.attn_proj.add_outer(1.0, &d_pre, r);
            let mut d_r = params.attn_proj.matvec_t(&d_pre);
            axpy(&mut d_r, w, d_out);
            d_r
        })
        .collect()
}
