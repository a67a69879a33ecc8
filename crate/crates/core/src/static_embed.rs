//! Static word embeddings (word2vec CBOW / skip-gram with negative
//! sampling), trained single-threaded so a seed fixes the result.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::words;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2vMode {
    Cbow,
    SkipGram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct W2vConfig {
    pub mode: W2vMode,
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negative: usize,
    /// Learning rate, decayed linearly to `min_alpha` over training.
    pub alpha: f64,
    pub min_alpha: f64,
    pub seed: u64,
}

impl Default for W2vConfig {
    fn default() -> Self {
        Self {
            mode: W2vMode::SkipGram,
            dim: 200,
            window: 6,
            epochs: 10,
            negative: 5,
            alpha: 0.025,
            min_alpha: 0.0001,
            seed: 0,
        }
    }
}

impl W2vConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 {
            return Err(Error::Config("word2vec dim and window must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.min_alpha >= 0.0 && self.min_alpha <= self.alpha) {
            return Err(Error::Config("word2vec learning rates must satisfy 0 <= min_alpha <= alpha".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    Max,
    /// Largest cosine over all (piece, piece) pairs; resolved by the caller.
    AllPairs,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
            Pooling::AllPairs => "all_pairs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(vocab: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if vocab.len() != vectors.len() || vocab.is_empty() {
            return Err(Error::InvalidInput("embedding vocabulary and vectors differ in length".into()));
        }
        let dim = vectors[0].len();
        if dim == 0 || vectors.iter().any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidInput("embedding vectors must be finite with one dimension".into()));
        }
        let index: HashMap<String, usize> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != vocab.len() {
            return Err(Error::InvalidInput("duplicate token in embedding vocabulary".into()));
        }
        Ok(Self {
            dim,
            vocab,
            index,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vectors[i].as_slice())
    }

    /// In-vocabulary vectors of the words of `text`.
    pub fn token_vectors(&self, text: &str) -> Vec<&[f64]> {
        words(text).iter().filter_map(|w| self.get(w)).collect()
    }

    /// Fraction of the words of `text` missing from the vocabulary.
    pub fn oov_fraction(&self, text: &str) -> f64 {
        let ws = words(text);
        if ws.is_empty() {
            return 1.0;
        }
        ws.iter().filter(|w| self.get(w).is_none()).count() as f64 / ws.len() as f64
    }

    /// Mean or max pooled vector of the in-vocabulary words of `text`.
    pub fn pool(&self, text: &str, pooling: Pooling) -> Result<Vec<f64>> {
        let vs = self.token_vectors(text);
        pool_vectors(&vs, pooling)
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        let mut out = format!("{} {}\n", self.vocab.len(), self.dim);
        for (tok, v) in self.vocab.iter().zip(&self.vectors) {
            out.push_str(tok);
            for x in v {
                write!(out, " {x}").expect("write to string");
            }
            out.push('\n');
        }
        crate::io::write_atomic(path, out.as_bytes())
    }

    pub fn load_text(path: &Path) -> Result<Self> {
        let contents = crate::io::read_to_string(path)?;
        let mut lines = contents.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty embedding file"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, 1, "header must be `vocab_size d`"))?;
        let [n, d] = dims[..] else {
            return Err(Error::parse(path, 1, "header must be `vocab_size d`"));
        };
        let mut vocab = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let tok = parts.next().unwrap_or_default().to_string();
            let v: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, i + 1, "non-numeric vector component"))?;
            if v.len() != d {
                return Err(Error::parse(path, i + 1, format!("expected {d} components, found {}", v.len())));
            }
            vocab.push(tok);
            vectors.push(v);
        }
        if vocab.len() != n {
            return Err(Error::parse(path, 1, format!("header promises {n} rows, found {}", vocab.len())));
        }
        Self::new(vocab, vectors)
    }
}

pub fn pool_vectors(vs: &[&[f64]], pooling: Pooling) -> Result<Vec<f64>> {
    let Some(first) = vs.first() else {
        return Err(Error::InvalidInput("no in-vocabulary tokens to pool".into()));
    };
    let mut out = first.to_vec();
    match pooling {
        Pooling::Mean => {
            for v in &vs[1..] {
                out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += x);
            }
            let n = vs.len() as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        Pooling::Max => {
            for v in &vs[1..] {
                out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o = o.max(*x));
            }
        }
        Pooling::AllPairs => {
            return Err(Error::InvalidInput("all-pairs pooling compares pairs, not vectors".into()));
        }
    }
    Ok(out)
}

/// Outcome of training: the table plus the sampled loss per epoch.
#[derive(Debug, Clone)]
pub struct Trained {
    pub table: EmbeddingTable,
    pub epoch_loss: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains on sentences given as raw text; tokens are [`words`].
pub fn train_word2vec<'a>(sentences: impl IntoIterator<Item = &'a str>, config: &W2vConfig) -> Result<Trained> {
    config.validate()?;
    let sentences: Vec<Vec<String>> = sentences.into_iter().map(words).filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(Error::InvalidInput("cannot train embeddings on an empty corpus".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for w in sentences.iter().flatten() {
        *counts.entry(w).or_default() += 1;
    }
    let mut vocab: Vec<(&str, u64)> = counts.into_iter().collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (w, _))| (*w, i)).collect();
    let corpus: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().map(|w| index[w.as_str()]).collect())
        .collect();

    let mut cumulative = Vec::with_capacity(vocab.len());
    let mut acc = 0.0;
    for (_, c) in &vocab {
        acc += (*c as f64).powf(0.75);
        cumulative.push(acc);
    }
    let noise_total = acc;

    let v = vocab.len();
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut syn0: Vec<Vec<f64>> = (0..v)
        .map(|_| (0..d).map(|_| (rng.random::<f64>() - 0.5) / d as f64).collect())
        .collect();
    let mut syn1 = vec![vec![0.0; d]; v];

    let words_per_epoch: usize = corpus.iter().map(Vec::len).sum();
    let total = (words_per_epoch * config.epochs).max(1) as f64;
    let mut processed = 0usize;
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut h = vec![0.0; d];
    let mut grad = vec![0.0; d];

    for _ in 0..config.epochs {
        let mut loss = 0.0;
        for sent in &corpus {
            for (i, &center) in sent.iter().enumerate() {
                let alpha =
                    (config.alpha - (config.alpha - config.min_alpha) * processed as f64 / total).max(config.min_alpha);
                processed += 1;
                let reduced = rng.random_range(0..config.window);
                let w = config.window - reduced;
                let lo = i.saturating_sub(w);
                let hi = (i + w).min(sent.len() - 1);
                let context: Vec<usize> = (lo..=hi).filter(|&j| j != i).map(|j| sent[j]).collect();
                if context.is_empty() {
                    continue;
                }
                match config.mode {
                    W2vMode::SkipGram => {
                        for &ctx in &context {
                            h.copy_from_slice(&syn0[center]);
                            grad.iter_mut().for_each(|g| *g = 0.0);
                            loss += negative_step(ctx, &h, &mut grad, &mut syn1, config.negative, alpha, &cumulative, noise_total, &mut rng);
                            syn0[center].iter_mut().zip(&grad).for_each(|(x, g)| *x += g);
                        }
                    }
                    W2vMode::Cbow => {
                        h.iter_mut().for_each(|x| *x = 0.0);
                        for &ctx in &context {
                            h.iter_mut().zip(&syn0[ctx]).for_each(|(a, b)| *a += b);
                        }
                        let n = context.len() as f64;
                        h.iter_mut().for_each(|x| *x /= n);
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        loss += negative_step(center, &h, &mut grad, &mut syn1, config.negative, alpha, &cumulative, noise_total, &mut rng);
                        for &ctx in &context {
                            syn0[ctx].iter_mut().zip(&grad).for_each(|(x, g)| *x += g);
                        }
                    }
                }
            }
        }
        epoch_loss.push(loss);
    }

    let table = EmbeddingTable::new(vocab.iter().map(|(w, _)| w.to_string()).collect(), syn0)?;
    Ok(Trained { table, epoch_loss })
}

/// One positive and `negative` noise updates of the output vectors for
/// hidden vector `h`; accumulates the input gradient into `grad` and
/// returns the sampled loss.
#[allow(clippy::too_many_arguments)]
fn negative_step(
    target: usize,
    h: &[f64],
    grad: &mut [f64],
    syn1: &mut [Vec<f64>],
    negative: usize,
    alpha: f64,
    cumulative: &[f64],
    noise_total: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut loss = 0.0;
    for k in 0..=negative {
        let (out, label) = if k == 0 {
            (target, 1.0)
        } else {
            let r = rng.random::<f64>() * noise_total;
            let idx = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
            if idx == target {
                continue;
            }
            (idx, 0.0)
        };
        let f = sigmoid(dot(h, &syn1[out]));
        loss -= if label > 0.0 { f.max(1e-12).ln() } else { (1.0 - f).max(1e-12).ln() };
        let g = (label - f) * alpha;
        for (gr, s) in grad.iter_mut().zip(syn1[out].iter()) {
            *gr += g * s;
        }
        for (s, x) in syn1[out].iter_mut().zip(h) {
            *s += g * x;
        }
    }
    loss
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: W2vMode, epochs: usize) -> W2vConfig {
        W2vConfig {
            mode,
            dim: 16,
            window: 2,
            epochs,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let t = train_word2vec(["a b c"], &small(W2vMode::SkipGram, 0)).unwrap();
        assert!(t.epoch_loss.is_empty());
        // vocab sorted by (count desc, token): a, b, c; init drawn in that order
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for tok in ["a", "b", "c"] {
            let want: Vec<f64> = (0..16).map(|_| (rng.random::<f64>() - 0.5) / 16.0).collect();
            assert_eq!(t.table.get(tok).unwrap(), want.as_slice());
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(train_word2vec(["a b"], &W2vConfig { dim: 0, ..Default::default() }).is_err());
        assert!(train_word2vec(["a b"], &W2vConfig { window: 0, ..Default::default() }).is_err());
        assert!(train_word2vec(["..."], &W2vConfig::default()).is_err());
    }

    #[test]
    fn deterministic_and_finite() {
        let corpus = ["the cat sat on the mat", "a dog ran in the park"];
        for mode in [W2vMode::Cbow, W2vMode::SkipGram] {
            let a = train_word2vec(corpus, &small(mode, 5)).unwrap();
            let b = train_word2vec(corpus, &small(mode, 5)).unwrap();
            assert_eq!(a.table, b.table);
            assert!(a.epoch_loss.iter().all(|l| l.is_finite()));
        }
    }

    #[test]
    fn pooling_arithmetic() {
        let t = EmbeddingTable::new(vec!["x".into(), "y".into()], vec![vec![1.0, 4.0], vec![3.0, -2.0]]).unwrap();
        assert_eq!(t.pool("x y", Pooling::Mean).unwrap(), vec![2.0, 1.0]);
        assert_eq!(t.pool("x y", Pooling::Max).unwrap(), vec![3.0, 4.0]);
        assert_eq!(t.pool("x", Pooling::Mean).unwrap(), vec![1.0, 4.0]);
        assert_eq!(t.pool("x", Pooling::Max).unwrap(), vec![1.0, 4.0]);
        assert!(t.pool("zzz", Pooling::Mean).is_err());
        assert_eq!(t.oov_fraction("x zzz"), 0.5);
    }

    #[test]
    fn text_file_round_trip() {
        let t = train_word2vec(["alpha beta gamma", "beta delta"], &small(W2vMode::Cbow, 2)).unwrap().table;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.txt");
        t.save_text(&p).unwrap();
        let first = std::fs::read_to_string(&p).unwrap();
        assert!(first.starts_with("4 16\n"));
        assert_eq!(EmbeddingTable::load_text(&p).unwrap(), t);
    }

    #[test]
    fn cosine_zero_norm_undefined() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), None);
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
    }
}
