use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{CorpusVariant, Note, NoteCorpus, PatientTable};
use crate::error::{Error, Result};
use crate::io::{read_to_string, tsv_rows};

const SAMPLE_FIRST: &str = include_str!("../../data/census_first.tsv");
const SAMPLE_LAST: &str = include_str!("../../data/census_last.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusName {
    pub name: String,
    pub census_count: u64,
}

/// Census-derived first and last names above their count thresholds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamePool {
    pub first_names: Vec<CensusName>,
    pub last_names: Vec<CensusName>,
    pub min_first_count: u64,
    pub min_last_count: u64,
}

pub const DEFAULT_MIN_FIRST_COUNT: u64 = 10;
pub const DEFAULT_MIN_LAST_COUNT: u64 = 400;

/// "mcDONALD" -> "Mcdonald"; hyphen and apostrophe parts are capitalized
/// independently.
fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut start = true;
    for c in raw.trim().chars() {
        if start {
            out.extend(c.to_uppercase());
        } else {
            out.extend(c.to_lowercase());
        }
        start = c == '-' || c == '\'' || c == ' ';
    }
    out
}

fn parse_census(path: &Path, contents: &str, min_count: u64) -> Result<Vec<CensusName>> {
    let mut merged: BTreeMap<String, u64> = BTreeMap::new();
    for (line, cols) in tsv_rows(contents) {
        if cols.len() < 2 {
            return Err(Error::parse(path, line, "expected name<TAB>count"));
        }
        let count: u64 = cols[1]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, format!("non-numeric count `{}`", cols[1])))?;
        let name = normalize_name(cols[0]);
        if name.is_empty() {
            return Err(Error::parse(path, line, "empty name"));
        }
        *merged.entry(name).or_default() += count;
    }
    Ok(merged
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .map(|(name, census_count)| CensusName { name, census_count })
        .collect())
}

impl NamePool {
    fn from_sources(
        first: (&Path, &str),
        last: (&Path, &str),
        min_first_count: u64,
        min_last_count: u64,
    ) -> Result<Self> {
        let first_names = parse_census(first.0, first.1, min_first_count)?;
        let last_names = parse_census(last.0, last.1, min_last_count)?;
        if first_names.is_empty() || last_names.is_empty() {
            return Err(Error::EmptyNamePool);
        }
        Ok(Self {
            first_names,
            last_names,
            min_first_count,
            min_last_count,
        })
    }

    /// The small census sample bundled with the crate.
    pub fn bundled_sample() -> Self {
        Self::from_sources(
            (Path::new("census_first.tsv"), SAMPLE_FIRST),
            (Path::new("census_last.tsv"), SAMPLE_LAST),
            DEFAULT_MIN_FIRST_COUNT,
            DEFAULT_MIN_LAST_COUNT,
        )
        .expect("bundled census sample is valid")
    }
}

pub fn load_census_names(first_path: &Path, last_path: &Path, min_first: u64, min_last: u64) -> Result<NamePool> {
    let first = read_to_string(first_path)?;
    let last = read_to_string(last_path)?;
    NamePool::from_sources((first_path, &first), (last_path, &last), min_first, min_last)
}

pub const DEFAULT_MARKER_PATTERN: &str = r"\[\*\*\s*Known\s+(?P<kind>First|Last)\s+Name[^\]]*?\*\*\]";

/// Regex locating patient-name pseudo-tokens. The `kind` group must capture
/// `first` or `last` (case-insensitive).
#[derive(Debug, Clone)]
pub struct MarkerPattern(Regex);

impl MarkerPattern {
    pub fn new(pattern: &str) -> Result<Self> {
        let re = Regex::new(pattern).map_err(|e| Error::Config(format!("marker pattern: {e}")))?;
        if !re.capture_names().flatten().any(|n| n == "kind") {
            return Err(Error::Config("marker pattern needs a `kind` capture group".into()));
        }
        Ok(Self(re))
    }

    pub fn as_str(&self) -> &str {
        self.0.as_str()
    }

    pub fn count(&self, text: &str) -> usize {
        self.0.find_iter(text).count()
    }
}

impl Default for MarkerPattern {
    fn default() -> Self {
        Self::new(DEFAULT_MARKER_PATTERN).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameSampling {
    #[default]
    Weighted,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NameStats {
    pub patients: usize,
    pub markers_replaced: usize,
    pub reidentified_patients: usize,
    /// Fraction of patients whose first name no other patient shares.
    pub unique_first_fraction: f64,
    pub unique_last_fraction: f64,
    pub unique_full_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct Reidentification {
    pub corpus: NoteCorpus,
    pub patients: PatientTable,
    pub stats: NameStats,
}

struct Sampler<'a> {
    names: &'a [CensusName],
    weighted: Option<WeightedIndex<u64>>,
}

impl<'a> Sampler<'a> {
    fn new(names: &'a [CensusName], mode: NameSampling) -> Result<Self> {
        let weighted = match mode {
            NameSampling::Weighted => Some(
                WeightedIndex::new(names.iter().map(|n| n.census_count))
                    .map_err(|e| Error::InvalidInput(format!("census weights: {e}")))?,
            ),
            NameSampling::Uniform => None,
        };
        Ok(Self { names, weighted })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> &'a str {
        let idx = match &self.weighted {
            Some(w) => w.sample(rng),
            None => rng.random_range(0..self.names.len()),
        };
        &self.names[idx].name
    }
}

fn unique_fraction<'a>(values: impl Iterator<Item = &'a str>) -> f64 {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut n = 0usize;
    for v in values {
        *counts.entry(v.to_lowercase()).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    counts.values().filter(|&&c| c == 1).count() as f64 / n as f64
}

/// Gives every patient a sampled census name and substitutes it for the
/// name markers in their notes. Patients are visited in id order, so the
/// output is a pure function of `(corpus, patients, pool, seed)`.
pub fn assign_names(
    corpus: &NoteCorpus,
    patients: &PatientTable,
    pool: &NamePool,
    seed: u64,
    marker: &MarkerPattern,
    sampling: NameSampling,
) -> Result<Reidentification> {
    corpus.check_patients(patients)?;
    let first = Sampler::new(&pool.first_names, sampling)?;
    let last = Sampler::new(&pool.last_names, sampling)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut records = Vec::with_capacity(patients.len());
    for record in patients.iter() {
        let mut r = record.clone();
        r.first_name = first.sample(&mut rng).to_string();
        r.last_name = last.sample(&mut rng).to_string();
        records.push(r);
    }
    let named = PatientTable::new(records)?;

    let mut replaced = 0usize;
    let mut notes = Vec::with_capacity(corpus.len());
    for note in corpus.notes() {
        let owner = named
            .get(&note.patient_id)
            .ok_or_else(|| Error::UnknownPatient(note.patient_id.0.clone()))?;
        let text = marker.0.replace_all(&note.text, |caps: &regex::Captures<'_>| {
            replaced += 1;
            if caps["kind"].eq_ignore_ascii_case("first") {
                owner.first_name.clone()
            } else {
                owner.last_name.clone()
            }
        });
        notes.push(Note {
            text: text.into_owned(),
            ..note.clone()
        });
    }
    let out = NoteCorpus::new(notes, CorpusVariant::Reidentified)?;
    debug_assert!(out.notes().iter().all(|n| marker.count(&n.text) == 0));
    let named = named.with_reidentified_scan(&out);

    let stats = NameStats {
        patients: named.len(),
        markers_replaced: replaced,
        reidentified_patients: named.iter().filter(|p| p.reidentified).count(),
        unique_first_fraction: unique_fraction(named.iter().map(|p| p.first_name.as_str())),
        unique_last_fraction: unique_fraction(named.iter().map(|p| p.last_name.as_str())),
        unique_full_fraction: {
            let full: Vec<String> = named.iter().map(|p| p.full_name()).collect();
            unique_fraction(full.iter().map(String::as_str))
        },
    };
    Ok(Reidentification {
        corpus: out,
        patients: named,
        stats,
    })
}
