//! JSON messages of the `/v1` scorer protocol.
//!
//! | method | path               | request               | response              |
//! |--------|--------------------|-----------------------|-----------------------|
//! | GET    | `/v1/info`         |                       | [`InfoResponse`]      |
//! | POST   | `/v1/score_span`   | [`ScoreSpanRequest`]  | [`ScoreSpanResponse`] |
//! | POST   | `/v1/conditional`  | [`ConditionalRequest`]| [`ConditionalResponse`]|
//! | POST   | `/v1/embed`        | [`EmbedRequest`]      | [`EmbedResponse`]     |
//!
//! Errors come back as [`ErrorResponse`] with status 400 (malformed
//! request) or 503 (model failure).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Capability;

pub const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub version: String,
    pub capabilities: BTreeSet<Capability>,
    pub vocab_size: usize,
    pub model_tag: String,
    /// Set when conditional responses are truncated to the top N tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpanRequest {
    pub prefix: String,
    pub suffix: String,
    pub candidate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpanResponse {
    pub nll_sum: f64,
    pub piece_count: usize,
    pub per_piece_nll: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRequest {
    pub tokens: Vec<String>,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalResponse {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
    /// Log normalizer of the full distribution when `tokens` is truncated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_z: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    Text,
    Tokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
    pub mode: EmbedMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}
