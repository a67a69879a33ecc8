//! Count-based bidirectional masked LM.
//!
//! Each training line becomes `[CLS] tokens… [SEP]`. For every non-special
//! position and every context shape `(a, b)` with `a ≤ k` tokens on the left
//! and `b ≤ k` on the right, the model counts the centre token. A query at a
//! masked position takes the unmasked runs `La`, `Ra` on either side (capped
//! at `k`, stopped by other masks) and backs off through
//! `(min(w, La), min(w, Ra))` for `w = k, k-1, …, 1`, using the first shape
//! whose context was observed; if none was, the unigram table. The chosen
//! level is smoothed with Laplace `α` over the whole vocabulary:
//! `p(t) = (c(t) + α) / (N + α·V)`.
//!
//! Token embeddings are PPMI co-occurrence rows (window `k`) multiplied by a
//! seeded Gaussian projection to `dim` columns; a text embedding is the mean
//! of its token embeddings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Capability, Scorer, ScorerInfo, SpanScore, TokenDistribution};
use crate::error::{Error, Result};
use crate::text::{is_special, tokenize, CLS, MASK, SEP, UNK};

const UNK_ID: u32 = 0;
const CLS_ID: u32 = 1;
const SEP_ID: u32 = 2;
const MASK_ID: u32 = 3;
const SPECIALS: [&str; 4] = [UNK, CLS, SEP, MASK];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    /// Context window on each side.
    pub k: usize,
    /// Laplace smoothing.
    pub alpha: f64,
    /// Seeds the embedding projection.
    pub seed: u64,
    pub dim: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            k: 8,
            alpha: 0.1,
            seed: 0,
            dim: 64,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("toy scorer window k must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config("toy scorer alpha must be positive and finite".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("toy embedding dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct Counts {
    total: u64,
    /// Sorted by token id.
    by_token: Vec<(u32, u64)>,
}

impl Counts {
    fn add(&mut self, token: u32) {
        self.total += 1;
        match self.by_token.binary_search_by_key(&token, |(t, _)| *t) {
            Ok(i) => self.by_token[i].1 += 1,
            Err(i) => self.by_token.insert(i, (token, 1)),
        }
    }

    fn get(&self, token: u32) -> u64 {
        self.by_token
            .binary_search_by_key(&token, |(t, _)| *t)
            .map_or(0, |i| self.by_token[i].1)
    }
}

fn context_key(a: usize, b: usize, left: &[u32], right: &[u32]) -> Vec<u32> {
    let mut key = Vec::with_capacity(2 + a + b);
    key.push(a as u32);
    key.push(b as u32);
    key.extend_from_slice(left);
    key.extend_from_slice(right);
    key
}

#[derive(Serialize, Deserialize)]
struct ToyArtifact {
    format: String,
    model_tag: String,
    config: ToyConfig,
    vocab: Vec<String>,
    sequences: Vec<Vec<u32>>,
}

const ARTIFACT_FORMAT: &str = "leakaudit-toy/1";

pub struct ToyScorer {
    config: ToyConfig,
    info: ScorerInfo,
    vocab: Arc<Vec<String>>,
    index: HashMap<String, u32>,
    unigram: Counts,
    contexts: HashMap<Vec<u32>, Counts>,
    embeddings: Vec<Vec<f64>>,
    sequences: Vec<Vec<u32>>,
}

impl std::fmt::Debug for ToyScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyScorer")
            .field("config", &self.config)
            .field("vocab_size", &self.vocab.len())
            .field("contexts", &self.contexts.len())
            .finish()
    }
}

impl ToyScorer {
    /// Trains on non-empty lines of text.
    pub fn train<'a>(lines: impl IntoIterator<Item = &'a str>, config: ToyConfig) -> Result<Self> {
        config.validate()?;
        let tokenized: Vec<Vec<String>> = lines
            .into_iter()
            .map(tokenize)
            .filter(|t| !t.is_empty())
            .collect();
        if tokenized.is_empty() {
            return Err(Error::InvalidInput("cannot train the toy scorer on an empty corpus".into()));
        }
        let words: BTreeSet<&str> = tokenized
            .iter()
            .flatten()
            .map(String::as_str)
            .filter(|t| !is_special(t))
            .collect();
        let vocab: Vec<String> = SPECIALS
            .iter()
            .copied()
            .chain(words)
            .map(str::to_string)
            .collect();
        let index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let sequences = tokenized
            .iter()
            .map(|toks| {
                let mut seq = Vec::with_capacity(toks.len() + 2);
                seq.push(CLS_ID);
                seq.extend(toks.iter().map(|t| index.get(t).copied().unwrap_or(UNK_ID)));
                seq.push(SEP_ID);
                seq
            })
            .collect();
        Ok(Self::from_sequences(vocab, sequences, config, "toy".into()))
    }

    fn from_sequences(vocab: Vec<String>, sequences: Vec<Vec<u32>>, config: ToyConfig, model_tag: String) -> Self {
        let k = config.k;
        let mut unigram = Counts::default();
        let mut contexts: HashMap<Vec<u32>, Counts> = HashMap::new();
        for seq in &sequences {
            let n = seq.len();
            for i in 1..n.saturating_sub(1) {
                let target = seq[i];
                unigram.add(target);
                let max_a = k.min(i);
                let max_b = k.min(n - 1 - i);
                for a in 0..=max_a {
                    for b in 0..=max_b {
                        if a == 0 && b == 0 {
                            continue;
                        }
                        let key = context_key(a, b, &seq[i - a..i], &seq[i + 1..i + 1 + b]);
                        contexts.entry(key).or_default().add(target);
                    }
                }
            }
        }
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let embeddings = ppmi_embeddings(vocab.len(), &sequences, k, config.dim, config.seed);
        let info = ScorerInfo {
            capabilities: Capability::ALL.into_iter().collect(),
            vocab_size: vocab.len(),
            model_tag,
        };
        Self {
            config,
            info,
            vocab: Arc::new(vocab),
            index,
            unigram,
            contexts,
            embeddings,
            sequences,
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.info.model_tag = tag.into();
        self
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Training sequences as token ids, `[CLS]`/`[SEP]` included.
    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn token_embedding(&self, token: &str) -> &[f64] {
        &self.embeddings[self.token_id(token) as usize]
    }

    fn ids(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.token_id(t)).collect()
    }

    /// Counts at the first backoff level with observed context; `None`
    /// means the unigram table.
    fn backoff(&self, seq: &[u32], pos: usize) -> Option<&Counts> {
        let k = self.config.k;
        let left_run = seq[..pos].iter().rev().take(k).take_while(|&&t| t != MASK_ID).count();
        let right_run = seq[pos + 1..].iter().take(k).take_while(|&&t| t != MASK_ID).count();
        let mut prev = None;
        for w in (1..=k).rev() {
            let (a, b) = (w.min(left_run), w.min(right_run));
            if a == 0 && b == 0 {
                break;
            }
            if prev == Some((a, b)) {
                continue;
            }
            prev = Some((a, b));
            let key = context_key(a, b, &seq[pos - a..pos], &seq[pos + 1..pos + 1 + b]);
            if let Some(c) = self.contexts.get(&key) {
                return Some(c);
            }
        }
        None
    }

    fn smoothed(&self, counts: &Counts, token: u32) -> f64 {
        let v = self.vocab.len() as f64;
        (counts.get(token) as f64 + self.config.alpha) / (counts.total as f64 + self.config.alpha * v)
    }

    fn prob(&self, seq: &[u32], pos: usize, target: u32) -> f64 {
        let counts = self.backoff(seq, pos).unwrap_or(&self.unigram);
        self.smoothed(counts, target)
    }

    fn distribution(&self, seq: &[u32], pos: usize) -> Vec<f64> {
        let counts = self.backoff(seq, pos).unwrap_or(&self.unigram);
        let v = self.vocab.len() as f64;
        let denom = counts.total as f64 + self.config.alpha * v;
        let base = self.config.alpha / denom;
        let mut probs = vec![base; self.vocab.len()];
        for &(t, c) in &counts.by_token {
            probs[t as usize] = (c as f64 + self.config.alpha) / denom;
        }
        probs
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let artifact = ToyArtifact {
            format: ARTIFACT_FORMAT.into(),
            model_tag: self.info.model_tag.clone(),
            config: self.config,
            vocab: self.vocab.to_vec(),
            sequences: self.sequences.clone(),
        };
        crate::io::write_atomic(path, &serde_json::to_vec(&artifact)?)
    }

    /// Rebuilds the tables from the stored training sequences.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let artifact: ToyArtifact = serde_json::from_slice(&bytes)?;
        if artifact.format != ARTIFACT_FORMAT {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported artifact format `{}`",
                path.display(),
                artifact.format
            )));
        }
        artifact.config.validate()?;
        let v = artifact.vocab.len() as u32;
        if artifact.vocab.len() < SPECIALS.len()
            || artifact.vocab[..SPECIALS.len()] != SPECIALS
            || artifact.sequences.iter().flatten().any(|&t| t >= v)
        {
            return Err(Error::InvalidInput(format!("{}: corrupt toy artifact", path.display())));
        }
        Ok(Self::from_sequences(
            artifact.vocab,
            artifact.sequences,
            artifact.config,
            artifact.model_tag,
        ))
    }
}

fn ppmi_embeddings(v: usize, sequences: &[Vec<u32>], window: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rows: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); v];
    for seq in sequences {
        let n = seq.len();
        for i in 1..n.saturating_sub(1) {
            let hi = (i + window).min(n - 2);
            for j in i + 1..=hi {
                let (a, b) = (seq[i], seq[j]);
                *rows[a as usize].entry(b).or_default() += 1.0;
                *rows[b as usize].entry(a).or_default() += 1.0;
            }
        }
    }
    let row_sums: Vec<f64> = rows.iter().map(|r| r.values().sum()).collect();
    let total: f64 = row_sums.iter().sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    let projection: Vec<Vec<f64>> = (0..v)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect()
        })
        .collect();

    rows.iter()
        .enumerate()
        .map(|(w, row)| {
            let mut out = vec![0.0; dim];
            for (&c, &count) in row {
                let pmi = (count * total / (row_sums[w] * row_sums[c as usize])).ln();
                if pmi > 0.0 {
                    for (o, r) in out.iter_mut().zip(&projection[c as usize]) {
                        *o += pmi * r;
                    }
                }
            }
            out
        })
        .collect()
}

impl Scorer for ToyScorer {
    fn info(&self) -> &ScorerInfo {
        &self.info
    }

    fn piece_count(&self, text: &str) -> Result<usize> {
        Ok(tokenize(text).len())
    }

    fn score_span(&self, prefix: &str, suffix: &str, candidate: &str) -> Result<SpanScore> {
        let pieces = tokenize(candidate);
        if pieces.is_empty() {
            return Err(Error::InvalidInput(format!("candidate `{candidate}` tokenizes to zero pieces")));
        }
        let left = self.ids(&tokenize(prefix));
        let right = self.ids(&tokenize(suffix));
        let mut seq = left.clone();
        seq.extend(std::iter::repeat_n(MASK_ID, pieces.len()));
        seq.extend(right);
        let per_piece = pieces
            .iter()
            .enumerate()
            .map(|(j, piece)| -self.prob(&seq, left.len() + j, self.token_id(piece)).ln())
            .collect();
        Ok(SpanScore::from_pieces(per_piece))
    }

    fn conditional(&self, tokens: &[String], position: usize) -> Result<TokenDistribution> {
        if position >= tokens.len() {
            return Err(Error::InvalidInput(format!("position {position} out of range")));
        }
        let mut seq = self.ids(tokens);
        seq[position] = MASK_ID;
        Ok(TokenDistribution {
            tokens: Arc::clone(&self.vocab),
            probs: self.distribution(&seq, position),
        })
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut ids = self.ids(&tokenize(text));
        if ids.is_empty() {
            return Err(Error::InvalidInput("cannot embed empty text".into()));
        }
        // summation in id order makes the mean independent of token order
        ids.sort_unstable();
        let mut out = vec![0.0; self.config.dim];
        for id in &ids {
            for (o, e) in out.iter_mut().zip(&self.embeddings[*id as usize]) {
                *o += e;
            }
        }
        let n = ids.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    fn embed_tokens(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        let toks = tokenize(text);
        if toks.is_empty() {
            return Err(Error::InvalidInput("cannot embed empty text".into()));
        }
        Ok(toks
            .iter()
            .map(|t| self.embeddings[self.token_id(t) as usize].clone())
            .collect())
    }
}
