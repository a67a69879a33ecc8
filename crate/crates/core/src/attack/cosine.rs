//! Cosine leakage: are patient names closer, in embedding space, to the
//! conditions the patient has than to the ones they do not?
//!
//! Per patient, `Δ = mean_{c ∈ pos} sim(name, c) − mean_{c ∈ neg} sim(name, c)`.
//! Mean and max pooling collapse each side to one vector before a single
//! cosine; all-pairs takes the largest cosine over (name piece, condition
//! piece) pairs. Entities with no in-vocabulary pieces or a zero-norm
//! vector are skipped, never imputed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::check_aligned;
use crate::corpus::{ConditionCatalog, ConditionMatrix, PatientRecord, PatientTable};
use crate::error::{Error, Result};
use crate::metrics::mean_std;
use crate::report::ReportRow;
use crate::scorer::ScorerHandle;
use crate::static_embed::{cosine, pool_vectors, EmbeddingTable, Pooling};

/// Where piece vectors come from.
#[derive(Clone, Copy)]
pub enum EmbeddingSource<'a> {
    Static { tag: &'a str, table: &'a EmbeddingTable },
    Contextual(&'a ScorerHandle),
}

impl EmbeddingSource<'_> {
    pub fn tag(&self) -> String {
        match self {
            EmbeddingSource::Static { tag, .. } => tag.to_string(),
            EmbeddingSource::Contextual(s) => s.model_tag().to_string(),
        }
    }

    /// Piece vectors of `text`; empty when nothing is in vocabulary.
    pub fn pieces(&self, text: &str) -> Result<Vec<Vec<f64>>> {
        match self {
            EmbeddingSource::Static { table, .. } => {
                Ok(table.token_vectors(text).into_iter().map(<[f64]>::to_vec).collect())
            }
            EmbeddingSource::Contextual(s) => s.embed_tokens(text),
        }
    }
}

/// Pooled vector or the raw pieces, depending on the pooling mode.
enum Entity {
    Pooled(Vec<f64>),
    Pieces(Vec<Vec<f64>>),
}

fn entity(source: &EmbeddingSource<'_>, text: &str, pooling: Pooling) -> Result<Option<Entity>> {
    let pieces = source.pieces(text)?;
    if pieces.is_empty() {
        return Ok(None);
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() > 0.0;
    Ok(match pooling {
        Pooling::AllPairs => {
            let kept: Vec<Vec<f64>> = pieces.into_iter().filter(|v| norm(v)).collect();
            (!kept.is_empty()).then_some(Entity::Pieces(kept))
        }
        _ => {
            let refs: Vec<&[f64]> = pieces.iter().map(Vec::as_slice).collect();
            let v = pool_vectors(&refs, pooling)?;
            norm(&v).then_some(Entity::Pooled(v))
        }
    })
}

fn similarity(a: &Entity, b: &Entity) -> Option<f64> {
    match (a, b) {
        (Entity::Pooled(x), Entity::Pooled(y)) => cosine(x, y),
        (Entity::Pieces(xs), Entity::Pieces(ys)) => xs
            .iter()
            .flat_map(|x| ys.iter().filter_map(move |y| cosine(x, y)))
            .reduce(f64::max),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageResult {
    pub source: String,
    pub pooling: Pooling,
    pub mean: f64,
    pub std: f64,
    pub patients: usize,
    /// Patients without a usable name or without usable positive and
    /// negative conditions.
    pub skipped_patients: usize,
    pub skipped_conditions: usize,
    pub deltas: Vec<f64>,
}

impl LeakageResult {
    pub fn row(&self, attack: &str, label_source: &str) -> ReportRow {
        ReportRow {
            pooling: Some(self.pooling.as_str().into()),
            source: Some(self.source.clone()),
            value_mean: Some(self.mean),
            value_std: Some(self.std),
            count: Some(self.patients),
            ..ReportRow::new(attack, &self.source, label_source, "all")
        }
    }
}

pub fn leakage_score(
    source: &EmbeddingSource<'_>,
    patients: &PatientTable,
    matrix: &ConditionMatrix,
    catalog: &ConditionCatalog,
    pooling: Pooling,
) -> Result<LeakageResult> {
    check_aligned(matrix, catalog)?;
    let conditions: Vec<Option<Entity>> = catalog
        .iter()
        .map(|c| entity(source, &c.description, pooling))
        .collect::<Result<_>>()?;
    let skipped_conditions = conditions.iter().filter(|c| c.is_none()).count();
    let per_patient: Vec<Option<f64>> = matrix
        .patients()
        .par_iter()
        .enumerate()
        .map(|(p, pid)| {
            let Some(rec) = patients.get(pid) else { return Ok(None) };
            let Some(name) = entity(source, &rec.full_name(), pooling)? else { return Ok(None) };
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for (c, cond) in conditions.iter().enumerate() {
                let Some(sim) = cond.as_ref().and_then(|e| similarity(&name, e)) else { continue };
                if matrix.get(p, c) {
                    pos.push(sim);
                } else {
                    neg.push(sim);
                }
            }
            if pos.is_empty() || neg.is_empty() {
                return Ok(None);
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            Ok(Some(mean(&pos) - mean(&neg)))
        })
        .collect::<Result<_>>()?;
    let deltas: Vec<f64> = per_patient.iter().flatten().copied().collect();
    let (mean, std) = mean_std(&deltas).ok_or(Error::UndefinedMetric("no patient has usable embeddings"))?;
    Ok(LeakageResult {
        source: source.tag(),
        pooling,
        mean,
        std,
        patients: deltas.len(),
        skipped_patients: per_patient.len() - deltas.len(),
        skipped_conditions,
        deltas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabAudit {
    pub source: String,
    pub name_tokens: usize,
    pub name_oov: usize,
    pub condition_tokens: usize,
    pub condition_oov: usize,
    /// Full names with no in-vocabulary token.
    pub missing_names: Vec<String>,
}

impl VocabAudit {
    pub fn name_oov_fraction(&self) -> f64 {
        frac(self.name_oov, self.name_tokens)
    }

    pub fn condition_oov_fraction(&self) -> f64 {
        frac(self.condition_oov, self.condition_tokens)
    }
}

fn frac(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Out-of-vocabulary counts for the names and condition descriptions of a
/// static table.
pub fn vocab_audit<'a>(
    tag: &str,
    table: &EmbeddingTable,
    patients: impl IntoIterator<Item = &'a PatientRecord>,
    catalog: &ConditionCatalog,
) -> VocabAudit {
    let count = |text: &str| -> (usize, usize) {
        let words = crate::text::words(text);
        let oov = words.iter().filter(|w| table.get(w).is_none()).count();
        (words.len(), oov)
    };
    let mut audit = VocabAudit {
        source: tag.into(),
        name_tokens: 0,
        name_oov: 0,
        condition_tokens: 0,
        condition_oov: 0,
        missing_names: Vec::new(),
    };
    let mut seen = BTreeMap::new();
    for p in patients {
        let full = p.full_name();
        let (n, oov) = count(&full);
        audit.name_tokens += n;
        audit.name_oov += oov;
        if n == oov {
            seen.insert(full, ());
        }
    }
    audit.missing_names = seen.into_keys().collect();
    for c in catalog.iter() {
        let (n, oov) = count(&c.description);
        audit.condition_tokens += n;
        audit.condition_oov += oov;
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Condition, ConditionSource, Gender};

    fn setup(vectors: Vec<(&str, Vec<f64>)>) -> (EmbeddingTable, PatientTable, ConditionCatalog, ConditionMatrix) {
        let (vocab, vecs): (Vec<String>, Vec<Vec<f64>>) =
            vectors.into_iter().map(|(t, v)| (t.to_string(), v)).unzip();
        let table = EmbeddingTable::new(vocab, vecs).unwrap();
        let patients = PatientTable::new([PatientRecord {
            patient_id: "p".into(),
            first_name: "ann".into(),
            last_name: "lee".into(),
            gender: Gender::F,
            reidentified: true,
        }])
        .unwrap();
        let catalog = ConditionCatalog::new(
            ["gout", "mrsa"]
                .iter()
                .map(|d| Condition {
                    condition_id: (*d).into(),
                    description: d.to_string(),
                    source: ConditionSource::Annotation,
                })
                .collect(),
        )
        .unwrap();
        let mut m = ConditionMatrix::empty(&patients, &catalog);
        m.set(0, 0);
        (table, patients, catalog, m)
    }

    #[test]
    fn identical_vectors_give_zero() {
        let v = vec![1.0, 2.0];
        let (t, p, c, m) = setup(vec![("ann", v.clone()), ("lee", v.clone()), ("gout", v.clone()), ("mrsa", v)]);
        for pooling in [Pooling::Mean, Pooling::Max, Pooling::AllPairs] {
            let r = leakage_score(&EmbeddingSource::Static { tag: "t", table: &t }, &p, &m, &c, pooling).unwrap();
            assert!(r.mean.abs() < 1e-15);
        }
    }

    #[test]
    fn aligned_positive_gives_one() {
        let (t, p, c, m) = setup(vec![
            ("ann", vec![1.0, 0.0]),
            ("lee", vec![1.0, 0.0]),
            ("gout", vec![1.0, 0.0]),
            ("mrsa", vec![0.0, 1.0]),
        ]);
        let src = EmbeddingSource::Static { tag: "t", table: &t };
        let r = leakage_score(&src, &p, &m, &c, Pooling::Mean).unwrap();
        assert!((r.mean - 1.0).abs() < 1e-15);
        // swapping labels negates
        let mut swapped = ConditionMatrix::empty(&p, &c);
        swapped.set(0, 1);
        let s = leakage_score(&src, &p, &swapped, &c, Pooling::Mean).unwrap();
        assert_eq!(s.mean, -r.mean);
    }

    #[test]
    fn oov_and_zero_norm_skipped() {
        let (t, p, c, m) = setup(vec![("ann", vec![0.0, 0.0]), ("gout", vec![1.0, 0.0]), ("mrsa", vec![0.0, 1.0])]);
        let src = EmbeddingSource::Static { tag: "t", table: &t };
        assert!(leakage_score(&src, &p, &m, &c, Pooling::Mean).is_err());
        let audit = vocab_audit("t", &t, p.iter(), &c);
        assert_eq!((audit.name_tokens, audit.name_oov), (2, 1));
        assert_eq!(audit.condition_oov, 0);
        assert!(audit.missing_names.is_empty());
    }
}
