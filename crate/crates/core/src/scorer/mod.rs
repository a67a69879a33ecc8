//! Model access shared by every attack.
//!
//! A [`Scorer`] advertises a set of [`Capability`] values; [`ScorerHandle`]
//! wraps one behind an `Arc`, refuses calls to capabilities the model does
//! not advertise, and enforces the span-length contract of
//! [`MaskedTemplate`].

pub mod protocol;
pub mod reference;
mod remote;
mod serve;
mod template;
mod toy;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use remote::{RemoteConfig, RemoteScorer};
pub use serve::{serve, RunningBridge};
pub use template::{MaskedTemplate, TemplateKind};
pub use toy::{ToyConfig, ToyScorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Capability {
    SpanScoring,
    ConditionalDistribution,
    TextEmbedding,
    TokenEmbeddings,
}

impl Capability {
    pub const ALL: [Capability; 4] = [
        Capability::SpanScoring,
        Capability::ConditionalDistribution,
        Capability::TextEmbedding,
        Capability::TokenEmbeddings,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerInfo {
    pub capabilities: BTreeSet<Capability>,
    pub vocab_size: usize,
    pub model_tag: String,
}

/// Negative log-likelihood (nats) of a candidate filling a masked span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanScore {
    pub nll_sum: f64,
    pub piece_count: usize,
    pub per_piece_nll: Vec<f64>,
}

impl SpanScore {
    pub fn from_pieces(per_piece_nll: Vec<f64>) -> Self {
        Self {
            nll_sum: per_piece_nll.iter().sum(),
            piece_count: per_piece_nll.len(),
            per_piece_nll,
        }
    }

    pub fn mean_nll(&self) -> f64 {
        self.nll_sum / self.piece_count as f64
    }

    pub fn perplexity(&self) -> f64 {
        self.mean_nll().exp()
    }
}

/// Probabilities over a (possibly truncated) token list.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub tokens: Arc<Vec<String>>,
    pub probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &p) in self.probs.iter().enumerate() {
            if best.is_none_or(|b| p > self.probs[b]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn prob_of(&self, token: &str) -> f64 {
        self.tokens
            .iter()
            .position(|t| t == token)
            .map_or(0.0, |i| self.probs[i])
    }
}

/// A masked language model, local or remote.
///
/// Implementations only override what they support; the defaults report
/// the capability as missing.
pub trait Scorer: Send + Sync {
    fn info(&self) -> &ScorerInfo;

    /// Number of model pieces `text` tokenizes to.
    fn piece_count(&self, text: &str) -> Result<usize> {
        Ok(self.score_span("", "", text)?.piece_count)
    }

    /// Masks every piece of `candidate` simultaneously between `prefix` and
    /// `suffix` and returns `-ln p(piece_i | template)` per piece.
    fn score_span(&self, _prefix: &str, _suffix: &str, _candidate: &str) -> Result<SpanScore> {
        Err(Error::MissingCapability(Capability::SpanScoring))
    }

    /// Distribution at `position` with that position treated as masked.
    fn conditional(&self, _tokens: &[String], _position: usize) -> Result<TokenDistribution> {
        Err(Error::MissingCapability(Capability::ConditionalDistribution))
    }

    fn embed_text(&self, _text: &str) -> Result<Vec<f64>> {
        Err(Error::MissingCapability(Capability::TextEmbedding))
    }

    fn embed_tokens(&self, _text: &str) -> Result<Vec<Vec<f64>>> {
        Err(Error::MissingCapability(Capability::TokenEmbeddings))
    }
}

/// Shared, capability-checked access to a scorer.
#[derive(Clone)]
pub struct ScorerHandle(Arc<dyn Scorer>);

impl std::fmt::Debug for ScorerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("ScorerHandle").field(&self.info().model_tag).finish()
    }
}

impl ScorerHandle {
    pub fn new(scorer: impl Scorer + 'static) -> Self {
        Self(Arc::new(scorer))
    }

    pub fn from_arc(scorer: Arc<dyn Scorer>) -> Self {
        Self(scorer)
    }

    pub fn info(&self) -> &ScorerInfo {
        self.0.info()
    }

    pub fn model_tag(&self) -> &str {
        &self.info().model_tag
    }

    pub fn has(&self, cap: Capability) -> bool {
        self.info().capabilities.contains(&cap)
    }

    pub fn require(&self, cap: Capability) -> Result<()> {
        if self.has(cap) {
            Ok(())
        } else {
            Err(Error::MissingCapability(cap))
        }
    }

    pub fn piece_count(&self, text: &str) -> Result<usize> {
        self.require(Capability::SpanScoring)?;
        self.0.piece_count(text)
    }

    /// Scores `candidate` in `template`; the candidate must tokenize to the
    /// template's span length.
    pub fn score_span(&self, template: &MaskedTemplate, candidate: &str) -> Result<SpanScore> {
        let score = self.score_raw(&template.prefix, &template.suffix, candidate)?;
        if score.piece_count != template.span_piece_count {
            return Err(Error::InvalidInput(format!(
                "candidate `{candidate}` has {} pieces but the template masks {}",
                score.piece_count, template.span_piece_count
            )));
        }
        Ok(score)
    }

    /// Scores without a template length check.
    pub fn score_raw(&self, prefix: &str, suffix: &str, candidate: &str) -> Result<SpanScore> {
        self.require(Capability::SpanScoring)?;
        let score = self.0.score_span(prefix, suffix, candidate)?;
        if score.piece_count == 0 {
            return Err(Error::InvalidInput(format!("candidate `{candidate}` tokenizes to zero pieces")));
        }
        Ok(score)
    }

    pub fn conditional(&self, tokens: &[String], position: usize) -> Result<TokenDistribution> {
        self.require(Capability::ConditionalDistribution)?;
        if position >= tokens.len() {
            return Err(Error::InvalidInput(format!(
                "position {position} out of range for {} tokens",
                tokens.len()
            )));
        }
        self.0.conditional(tokens, position)
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.require(Capability::TextEmbedding)?;
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("cannot embed empty text".into()));
        }
        self.0.embed_text(text)
    }

    pub fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        self.require(Capability::TokenEmbeddings)?;
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("cannot embed empty text".into()));
        }
        self.0.embed_tokens(text)
    }
}
