//! Server-side ranking. Works only from payloads, the model and public news.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{NewsIdx, NewsTable};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::{encode_news, reconstruct_user, BasisTable, ModelParams};

use super::{Payload, ServingRequest, ServingResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub news_id: String,
    pub score: f64,
}

/// Candidate embeddings for one model version, computed once.
#[derive(Debug, Clone)]
pub struct CandidateCache {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    embeddings: Vec<Vec<f64>>,
    basis: BasisTable,
}

impl CandidateCache {
    pub fn build(model: &ModelParams, news: &NewsTable) -> Result<Self> {
        let embeddings = news
            .articles()
            .par_iter()
            .map(|a| encode_news(&model.news, &a.token_ids))
            .collect::<Result<Vec<_>>>()?;
        let ids: Vec<String> = news.articles().iter().map(|a| a.news_id.clone()).collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(CandidateCache {
            ids,
            index,
            embeddings,
            basis: model.basis.clone(),
        })
    }

    pub fn embedding(&self, idx: NewsIdx) -> &[f64] {
        &self.embeddings[idx.get()]
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// The scoring vector the server derives from a payload.
    pub fn user_vector(&self, payload: &Payload) -> Result<Vec<f64>> {
        match payload {
            Payload::PrivateRec(a) => {
                if a.coeffs().len() != self.basis.num_basis() {
                    return Err(Error::invalid(format!(
                        "attention payload has {} values, model has {} basis vectors",
                        a.coeffs().len(),
                        self.basis.num_basis()
                    )));
                }
                Ok(reconstruct_user(a.coeffs(), &self.basis))
            }
            Payload::Vdp(u) => {
                if u.len() != self.dim() {
                    return Err(Error::invalid(format!(
                        "embedding payload has {} values, model dimension is {}",
                        u.len(),
                        self.dim()
                    )));
                }
                Ok(u.clone())
            }
        }
    }

    /// Dot-product scores for candidates given by table index.
    pub fn score(&self, payload: &Payload, candidates: &[NewsIdx]) -> Result<Vec<f64>> {
        let u = self.user_vector(payload)?;
        candidates
            .iter()
            .map(|&c| {
                self.embeddings
                    .get(c.get())
                    .map(|r| dot(&u, r))
                    .ok_or_else(|| Error::invalid(format!("unknown news index {}", c.0)))
            })
            .collect()
    }

    /// Rank candidates by descending score, ties by ascending news id.
    pub fn serve_rank(&self, payload: &Payload, candidates: &[String]) -> Result<Vec<RankedItem>> {
        if candidates.is_empty() {
            return Err(Error::invalid("candidate list is empty"));
        }
        let idx = candidates
            .iter()
            .map(|id| {
                self.index
                    .get(id)
                    .map(|&i| NewsIdx(i as u32))
                    .ok_or_else(|| Error::invalid(format!("unknown news id {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let scores = self.score(payload, &idx)?;
        let mut ranked: Vec<RankedItem> = idx
            .iter()
            .zip(scores)
            .map(|(i, score)| RankedItem {
                news_id: self.ids[i.get()].clone(),
                score,
            })
            .collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.news_id.cmp(&b.news_id)));
        Ok(ranked)
    }

    pub fn respond(&self, request: &ServingRequest) -> Result<ServingResponse> {
        let payload = request.decode_payload()?;
        Ok(ServingResponse {
            request_id: request.request_id.clone(),
            mode: request.mode,
            ranked: self.serve_rank(&payload, &request.candidates)?,
        })
    }
}
