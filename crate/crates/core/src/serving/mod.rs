//! Online serving: the client builds a private payload from its history and
//! the server ranks public candidates against it.
//!
//! [`client`] is the only side that sees history tokens. [`server`] works from
//! the payload, the model and the public news table.

pub mod client;
pub mod server;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use client::{clipped_attention, get_priv_attn, vdp_embed};
pub use server::{CandidateCache, RankedItem};

/// The perturbed attention vector `α̃` sent by a PrivateRec client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrivateAttention {
    coeffs: Vec<f64>,
}

impl PrivateAttention {
    /// Accepts a vector on the probability simplex (sum within 1e-9).
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::invalid("private attention is empty"));
        }
        if coeffs.iter().any(|&c| !(c.is_finite() && c >= 0.0)) {
            return Err(Error::invalid("private attention has negative or non-finite entries"));
        }
        let total: f64 = coeffs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("private attention sums to {total}")));
        }
        Ok(PrivateAttention { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.coeffs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServingMode {
    PrivateRec,
    Vdp,
}

impl std::fmt::Display for ServingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ServingMode::PrivateRec => "privaterec",
            ServingMode::Vdp => "vdp",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    PrivateRec(PrivateAttention),
    Vdp(Vec<f64>),
}

impl Payload {
    pub fn mode(&self) -> ServingMode {
        match self {
            Payload::PrivateRec(_) => ServingMode::PrivateRec,
            Payload::Vdp(_) => ServingMode::Vdp,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Payload::PrivateRec(a) => a.coeffs(),
            Payload::Vdp(v) => v,
        }
    }
}

/// One line of a request log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServingRequest {
    pub request_id: String,
    pub mode: ServingMode,
    pub payload: Vec<f64>,
    pub candidates: Vec<String>,
}

impl ServingRequest {
    pub fn new(request_id: String, payload: &Payload, candidates: Vec<String>) -> Self {
        ServingRequest {
            request_id,
            mode: payload.mode(),
            payload: payload.values().to_vec(),
            candidates,
        }
    }

    pub fn decode_payload(&self) -> Result<Payload> {
        Ok(match self.mode {
            ServingMode::PrivateRec => Payload::PrivateRec(PrivateAttention::new(self.payload.clone())?),
            ServingMode::Vdp => {
                if self.payload.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("embedding payload has non-finite entries"));
                }
                Payload::Vdp(self.payload.clone())
            }
        })
    }
}

/// One line of a response log: candidates by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServingResponse {
    pub request_id: String,
    pub mode: ServingMode,
    pub ranked: Vec<RankedItem>,
}
