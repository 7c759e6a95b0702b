use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, softmax, softmax_backward};

use super::params::NewsEncoderParams;

/// Intermediates of one news encoding, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NewsTrace {
    pub(crate) tokens: Vec<u32>,
    /// `tanh(emb_t)` for every position, row-major `L × d_tok`.
    pub(crate) activations: Vec<f64>,
    pub(crate) weights: Vec<f64>,
    pub(crate) pooled: Vec<f64>,
    pub output: Vec<f64>,
}

fn check_tokens(params: &NewsEncoderParams, token_ids: &[u32]) -> Result<()> {
    if token_ids.is_empty() {
        return Err(Error::invalid("news text has no tokens"));
    }
    let v = params.vocab_size();
    if let Some(&bad) = token_ids.iter().find(|&&t| t as usize >= v) {
        return Err(Error::invalid(format!(
            "token id {bad} out of range for vocabulary of size {v}"
        )));
    }
    Ok(())
}

/// Encode a token sequence into a `d`-dimensional news embedding.
///
/// Callers pad short titles with token 0; a title made only of pad tokens
/// encodes to the anonymous embedding `r_0`.
pub fn encode_news(params: &NewsEncoderParams, token_ids: &[u32]) -> Result<Vec<f64>> {
    Ok(encode_news_traced(params, token_ids)?.output)
}

pub(crate) fn encode_news_traced(
    params: &NewsEncoderParams,
    token_ids: &[u32],
) -> Result<NewsTrace> {
    check_tokens(params, token_ids)?;
    let t_dim = params.token_embeddings.cols();
    let mut activations = Vec::with_capacity(token_ids.len() * t_dim);
    let mut scores = Vec::with_capacity(token_ids.len());
    for &tok in token_ids {
        let emb = params.token_embeddings.row(tok as usize);
        let start = activations.len();
        activations.extend(emb.iter().map(|x| x.tanh()));
        scores.push(dot(&params.pool_query, &activations[start..]));
    }
    let weights = softmax(&scores);
    let mut pooled = vec![0.0; t_dim];
    for (&tok, &w) in token_ids.iter().zip(&weights) {
        axpy(&mut pooled, w, params.token_embeddings.row(tok as usize));
    }
    let output = params.projection.matvec_t(&pooled);
    Ok(NewsTrace {
        tokens: token_ids.to_vec(),
        activations,
        weights,
        pooled,
        output,
    })
}

/// The anonymous embedding `r_0`: encoding of a title made only of pad tokens.
pub fn anonymous_embedding(params: &NewsEncoderParams, title_len: usize) -> Result<Vec<f64>> {
    encode_news(params, &vec![0; title_len.max(1)])
}

pub(crate) fn news_backward(
    params: &NewsEncoderParams,
    trace: &NewsTrace,
    d_out: &[f64],
    grads: &mut NewsEncoderParams,
) {
    let t_dim = params.token_embeddings.cols();
    grads.projection.add_outer(1.0, &trace.pooled, d_out);
    let d_pooled = params.projection.matvec(d_out);
    let d_weights: Vec<f64> = trace
        .tokens
        .iter()
        .map(|&tok| dot(params.token_embeddings.row(tok as usize), &d_pooled))
        .collect();
    let d_scores = softmax_backward(&trace.weights, &d_weights);
    for (t, &tok) in trace.tokens.iter().enumerate() {
        let act = &trace.activations[t * t_dim..(t + 1) * t_dim];
        let ds = d_scores[t];
        axpy(&mut grads.pool_query, ds, act);
        let w = trace.weights[t];
        let row = grads.token_embeddings.row_mut(tok as usize);
        for j in 0..t_dim {
            row[j] += w * d_pooled[j] + ds * params.pool_query[j] * (1.0 - act[j] * act[j]);
        }
    }
}
