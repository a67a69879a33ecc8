//! Small scorers with known behavior, used as controls and in tests.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::{Capability, Scorer, ScorerInfo, SpanScore, TokenDistribution};
use crate::error::{Error, Result};
use crate::text::tokenize;

/// Every piece gets probability `1 / V`; every conditional is uniform.
pub struct UniformScorer {
    info: ScorerInfo,
    vocab: Arc<Vec<String>>,
}

impl UniformScorer {
    pub fn new(vocab: Vec<String>) -> Self {
        assert!(!vocab.is_empty(), "uniform scorer needs a vocabulary");
        Self {
            info: ScorerInfo {
                capabilities: [Capability::SpanScoring, Capability::ConditionalDistribution].into(),
                vocab_size: vocab.len(),
                model_tag: "uniform".into(),
            },
            vocab: Arc::new(vocab),
        }
    }
}

impl Scorer for UniformScorer {
    fn info(&self) -> &ScorerInfo {
        &self.info
    }

    fn score_span(&self, _prefix: &str, _suffix: &str, candidate: &str) -> Result<SpanScore> {
        let nll = (self.vocab.len() as f64).ln();
        Ok(SpanScore::from_pieces(vec![nll; tokenize(candidate).len()]))
    }

    fn conditional(&self, _tokens: &[String], _position: usize) -> Result<TokenDistribution> {
        let p = 1.0 / self.vocab.len() as f64;
        Ok(TokenDistribution {
            tokens: Arc::clone(&self.vocab),
            probs: vec![p; self.vocab.len()],
        })
    }
}

type SpanFn = dyn Fn(&str, &str, &str) -> f64 + Send + Sync;
type CondFn = dyn Fn(&[String], usize) -> Vec<f64> + Send + Sync;
type EmbedFn = dyn Fn(&str) -> Vec<f64> + Send + Sync;

/// A scorer assembled from closures.
///
/// The span closure returns the per-piece NLL for `(prefix, suffix,
/// candidate)`; every piece of the candidate gets that value. The
/// conditional closure returns probabilities aligned with the vocabulary
/// given to [`ClosureScorer::with_conditional`].
pub struct ClosureScorer {
    info: ScorerInfo,
    span: Option<Box<SpanFn>>,
    conditional: Option<(Arc<Vec<String>>, Box<CondFn>)>,
    embed: Option<Box<EmbedFn>>,
}

impl ClosureScorer {
    pub fn new(model_tag: impl Into<String>) -> Self {
        Self {
            info: ScorerInfo {
                capabilities: BTreeSet::new(),
                vocab_size: 0,
                model_tag: model_tag.into(),
            },
            span: None,
            conditional: None,
            embed: None,
        }
    }

    pub fn with_span(mut self, f: impl Fn(&str, &str, &str) -> f64 + Send + Sync + 'static) -> Self {
        self.info.capabilities.insert(Capability::SpanScoring);
        self.span = Some(Box::new(f));
        self
    }

    pub fn with_conditional(
        mut self,
        vocab: Vec<String>,
        f: impl Fn(&[String], usize) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.info.capabilities.insert(Capability::ConditionalDistribution);
        self.info.vocab_size = vocab.len();
        self.conditional = Some((Arc::new(vocab), Box::new(f)));
        self
    }

    /// Text embedding; token embeddings are the embeddings of each token.
    pub fn with_embedding(mut self, f: impl Fn(&str) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.info.capabilities.insert(Capability::TextEmbedding);
        self.info.capabilities.insert(Capability::TokenEmbeddings);
        self.embed = Some(Box::new(f));
        self
    }
}

impl Scorer for ClosureScorer {
    fn info(&self) -> &ScorerInfo {
        &self.info
    }

    fn score_span(&self, prefix: &str, suffix: &str, candidate: &str) -> Result<SpanScore> {
        let f = self
            .span
            .as_ref()
            .ok_or(Error::MissingCapability(Capability::SpanScoring))?;
        let nll = f(prefix, suffix, candidate);
        Ok(SpanScore::from_pieces(vec![nll; tokenize(candidate).len()]))
    }

    fn conditional(&self, tokens: &[String], position: usize) -> Result<TokenDistribution> {
        let (vocab, f) = self
            .conditional
            .as_ref()
            .ok_or(Error::MissingCapability(Capability::ConditionalDistribution))?;
        let probs = f(tokens, position);
        if probs.len() != vocab.len() {
            return Err(Error::Protocol("conditional closure returned wrong length".into()));
        }
        Ok(TokenDistribution {
            tokens: Arc::clone(vocab),
            probs,
        })
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let f = self
            .embed
            .as_ref()
            .ok_or(Error::MissingCapability(Capability::TextEmbedding))?;
        Ok(f(text))
    }

    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let f = self
            .embed
            .as_ref()
            .ok_or(Error::MissingCapability(Capability::TokenEmbeddings))?;
        Ok(tokenize(text).iter().map(|t| f(t)).collect())
    }
}
