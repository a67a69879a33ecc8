//! Synthetic patients, conditions and notes.
//!
//! Real clinical notes cannot ship with the toolkit, so the pipeline and the
//! test suites run on corpora generated here. Everything is a pure function
//! of its parameters and seed.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Condition, ConditionCatalog, ConditionMatrix, ConditionSource, CorpusVariant, Gender, Note, NoteCategory,
    NoteCorpus, PatientId, PatientRecord, PatientTable,
};
use super::NamePool;
use crate::error::Result;

const ICD9_SAMPLE: &str = include_str!("../../data/icd9_sample.tsv");

/// How condition prevalence is distributed across the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyShape {
    /// Every condition held by (nearly) the same number of patients.
    Balanced,
    /// Condition `i` drawn with weight `1 / (i + 1)^exponent`.
    Zipf { exponent: f64 },
    /// Each patient's conditions drawn uniformly, independently.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub patients: usize,
    pub conditions: usize,
    pub conditions_per_patient: usize,
    pub shape: FrequencyShape,
    /// Mix 1-, 2- and 3-token condition descriptions.
    pub multi_piece: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub patients: PatientTable,
    pub catalog: ConditionCatalog,
    pub matrix: ConditionMatrix,
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ra", "te", "su", "vo", "ne", "pi", "da", "ze", "fu", "bri", "gon", "tha", "xel",
];

/// A pronounceable pseudo-word unique per index; never an English word or
/// a census name.
pub fn pseudo_word(i: usize) -> String {
    let n = SYLLABLES.len();
    format!("{}{}{}x", SYLLABLES[i % n], SYLLABLES[(i / n) % n], SYLLABLES[(i / (n * n)) % n])
}

/// Synthetic condition catalog whose descriptions start with a distinct
/// pseudo-word. With `multi_piece` the descriptions cycle through 1, 2 and
/// 3 tokens.
pub fn synthetic_catalog(n: usize, multi_piece: bool) -> ConditionCatalog {
    let conditions = (0..n)
        .map(|i| {
            let head = pseudo_word(i);
            let description = match (multi_piece, i % 3) {
                (false, _) | (true, 0) => head,
                (true, 1) => format!("{head} syndrome"),
                _ => format!("{head} nodular disease"),
            };
            Condition {
                condition_id: format!("C{i:04}").as_str().into(),
                description,
                source: ConditionSource::Annotation,
            }
        })
        .collect();
    ConditionCatalog::new(conditions).expect("synthetic ids are unique")
}

/// The bundled sample of ICD-9 codes with short descriptions.
pub fn bundled_icd9() -> ConditionCatalog {
    let conditions = crate::io::tsv_rows(ICD9_SAMPLE)
        .map(|(_, cols)| Condition {
            condition_id: cols[0].into(),
            description: cols[1].to_string(),
            source: ConditionSource::Icd9,
        })
        .collect();
    ConditionCatalog::new(conditions).expect("bundled catalog is valid")
}

/// Patients with distinct full names drawn from `pool`.
pub fn named_patients(n: usize, pool: &NamePool, id_prefix: &str, rng: &mut ChaCha8Rng) -> PatientTable {
    patients_avoiding(n, pool, id_prefix, &BTreeSet::new(), rng)
}

/// Like [`named_patients`] but never reuses a full name in `taken`.
pub fn patients_avoiding(
    n: usize,
    pool: &NamePool,
    id_prefix: &str,
    taken: &BTreeSet<String>,
    rng: &mut ChaCha8Rng,
) -> PatientTable {
    let capacity = pool.first_names.len() * pool.last_names.len();
    assert!(n + taken.len() <= capacity, "name pool too small for {n} distinct patients");
    let mut used = taken.clone();
    let mut records = Vec::with_capacity(n);
    while records.len() < n {
        let first = &pool.first_names.choose(rng).unwrap().name;
        let last = &pool.last_names.choose(rng).unwrap().name;
        let full = format!("{first} {last}").to_lowercase();
        if !used.insert(full) {
            continue;
        }
        records.push(PatientRecord {
            patient_id: PatientId(format!("{id_prefix}{:05}", records.len())),
            first_name: first.clone(),
            last_name: last.clone(),
            gender: if rng.random_bool(0.5) { Gender::M } else { Gender::F },
            reidentified: true,
        });
    }
    PatientTable::new(records).expect("generated ids are unique")
}

/// Draws `per_patient` distinct conditions for every patient.
pub fn draw_matrix(
    patients: &PatientTable,
    catalog: &ConditionCatalog,
    per_patient: usize,
    shape: FrequencyShape,
    rng: &mut ChaCha8Rng,
) -> ConditionMatrix {
    let n = catalog.len();
    let per_patient = per_patient.min(n);
    let mut matrix = ConditionMatrix::empty(patients, catalog);
    let mut counts = vec![0usize; n];
    for p in 0..matrix.num_patients() {
        let chosen: Vec<usize> = match shape {
            FrequencyShape::Balanced => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(rng);
                idx.sort_by_key(|&c| counts[c]);
                idx.truncate(per_patient);
                idx
            }
            FrequencyShape::Zipf { exponent } => {
                let idx: Vec<usize> = (0..n).collect();
                idx.choose_multiple_weighted(rng, per_patient, |&c| 1.0 / ((c + 1) as f64).powf(exponent))
                    .expect("positive weights")
                    .copied()
                    .collect()
            }
            FrequencyShape::Independent => rand::seq::index::sample(rng, n, per_patient).into_vec(),
        };
        for c in chosen {
            counts[c] += 1;
            matrix.set(p, c);
        }
    }
    matrix
}

pub fn fixture(spec: &FixtureSpec) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let patients = named_patients(spec.patients, &NamePool::bundled_sample(), "P", &mut rng);
    let catalog = synthetic_catalog(spec.conditions, spec.multi_piece);
    let matrix = draw_matrix(&patients, &catalog, spec.conditions_per_patient, spec.shape, &mut rng);
    Fixture {
        patients,
        catalog,
        matrix,
    }
}

/// Parameters of the demonstration dataset written by `synth --demo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoSpec {
    pub patients: usize,
    pub notes_per_patient: usize,
    pub conditions_per_patient: usize,
    pub zipf_exponent: f64,
    /// Probability that a sentence slot carries a name marker.
    pub mention_rate: f64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            patients: 60,
            notes_per_patient: 3,
            conditions_per_patient: 5,
            zipf_exponent: 1.0,
            mention_rate: 0.05,
        }
    }
}

/// A deidentified corpus with unnamed patients, a catalog and labels.
#[derive(Debug, Clone)]
pub struct DemoData {
    pub corpus: NoteCorpus,
    pub patients: PatientTable,
    pub catalog: ConditionCatalog,
    pub matrix: ConditionMatrix,
}

const FILLER: [&str; 10] = [
    "Vitals stable overnight.",
    "Pt resting comfortably in bed.",
    "Tolerating diet without difficulty.",
    "Plan to continue current management.",
    "Family at bedside, questions answered.",
    "Lungs clear bilaterally.",
    "Pain controlled with current regimen.",
    "Will follow up labs in the morning.",
    "Afebrile, no acute events.",
    "Ambulating with assistance.",
];

const CATEGORIES: [&str; 5] = ["Nursing", "Physician ", "Nursing/other", "Discharge summary", "Radiology"];

pub fn demo(spec: &DemoSpec, seed: u64) -> Result<DemoData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let catalog = bundled_icd9();
    let patients = PatientTable::new((0..spec.patients).map(|i| PatientRecord {
        patient_id: PatientId(format!("{}", 10_000 + i)),
        first_name: String::new(),
        last_name: String::new(),
        gender: if rng.random_bool(0.5) { Gender::M } else { Gender::F },
        reidentified: false,
    }))?;
    let matrix = draw_matrix(
        &patients,
        &catalog,
        spec.conditions_per_patient,
        FrequencyShape::Zipf {
            exponent: spec.zipf_exponent,
        },
        &mut rng,
    );

    let mut notes = Vec::new();
    for (p, pid) in matrix.patients().iter().enumerate() {
        let conditions: Vec<&str> = matrix
            .positives_of(p)
            .iter()
            .map(|&c| catalog.get(c).description.as_str())
            .collect();
        for k in 0..spec.notes_per_patient {
            let mut sentences = Vec::new();
            for s in 0..4 {
                let roll: f64 = rng.random();
                if roll < spec.mention_rate {
                    let cond = conditions.choose(&mut rng).copied().unwrap_or("observation");
                    sentences.push(format!(
                        "[**Known First Name {}**] [**Known Last Name {}**] was admitted with {}.",
                        rng.random_range(100..999),
                        rng.random_range(100..999),
                        cond.to_lowercase()
                    ));
                } else if roll < spec.mention_rate * 1.5 {
                    sentences.push(format!("Spoke with Mr. [**Known Last Name {}**] about discharge.", s + 1));
                } else if roll < 0.6 {
                    let cond = conditions.choose(&mut rng).copied().unwrap_or("observation");
                    sentences.push(format!("Pt is a [**Age**] yo with history of {}.", cond.to_lowercase()));
                } else {
                    sentences.push(FILLER.choose(&mut rng).unwrap().to_string());
                }
            }
            notes.push(Note {
                note_id: format!("{pid}-{k}"),
                patient_id: pid.clone(),
                category: NoteCategory::parse(CATEGORIES.choose(&mut rng).unwrap()),
                text: sentences.join(" "),
            });
        }
    }
    Ok(DemoData {
        corpus: NoteCorpus::new(notes, CorpusVariant::Deidentified)?,
        patients,
        catalog,
        matrix,
    })
}
