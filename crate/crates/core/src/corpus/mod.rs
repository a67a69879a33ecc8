//! Clinical note corpora, patient identities and condition labels.

mod conditions;
mod names;
mod notes;
mod stats;
pub mod synth;
mod variants;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use conditions::{
    dictionary_extract, load_annotations, load_catalog, write_annotations, write_catalog, Condition,
    ConditionCatalog, ConditionMatrix, ConditionSource,
};
pub use names::{
    assign_names, load_census_names, CensusName, MarkerPattern, NamePool, NameSampling, NameStats, Reidentification,
    DEFAULT_MARKER_PATTERN, DEFAULT_MIN_FIRST_COUNT, DEFAULT_MIN_LAST_COUNT,
};
pub use notes::{load_notes, load_patients, write_notes, write_patients, LoadOptions};
pub use stats::{corpus_stats, CorpusStats};
pub use variants::{build_name_insertion, build_template_only, split_sentences, SentenceSplitter, TEMPLATE_ONLY_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub String);

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PatientId {
    fn from(s: &str) -> Self {
        PatientId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionId(pub String);

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ConditionId {
    fn from(s: &str) -> Self {
        ConditionId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoteCategory {
    Physician,
    Nursing,
    NursingOther,
    DischargeSummary,
    Other,
}

impl NoteCategory {
    pub fn parse(raw: &str) -> Self {
        let norm: String = raw
            .trim()
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect();
        match norm.as_str() {
            "physician" => NoteCategory::Physician,
            "nursing" => NoteCategory::Nursing,
            "nursingother" => NoteCategory::NursingOther,
            "dischargesummary" => NoteCategory::DischargeSummary,
            _ => NoteCategory::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoteCategory::Physician => "Physician",
            NoteCategory::Nursing => "Nursing",
            NoteCategory::NursingOther => "Nursing/other",
            NoteCategory::DischargeSummary => "Discharge summary",
            NoteCategory::Other => "Other",
        }
    }

    /// The four categories retained by default.
    pub fn is_retained(self) -> bool {
        self != NoteCategory::Other
    }
}

impl Serialize for NoteCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for NoteCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(NoteCategory::parse(&raw))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: String,
    pub patient_id: PatientId,
    pub category: NoteCategory,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusVariant {
    Deidentified,
    Reidentified,
    NameInsertion,
    TemplateOnly,
}

/// An immutable set of notes with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteCorpus {
    notes: Vec<Note>,
    variant: CorpusVariant,
}

impl NoteCorpus {
    pub fn new(notes: Vec<Note>, variant: CorpusVariant) -> Result<Self> {
        let mut seen = HashSet::with_capacity(notes.len());
        for note in &notes {
            if !seen.insert(note.note_id.as_str()) {
                return Err(Error::DuplicateNote(note.note_id.clone()));
            }
        }
        Ok(Self { notes, variant })
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn variant(&self) -> CorpusVariant {
        self.variant
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Notes grouped by owner, in note order.
    pub fn notes_by_patient(&self) -> BTreeMap<&PatientId, Vec<&Note>> {
        let mut out: BTreeMap<&PatientId, Vec<&Note>> = BTreeMap::new();
        for note in &self.notes {
            out.entry(&note.patient_id).or_default().push(note);
        }
        out
    }

    /// Every referenced patient must exist in `patients`.
    pub fn check_patients(&self, patients: &PatientTable) -> Result<()> {
        match self.notes.iter().find(|n| !patients.contains(&n.patient_id)) {
            Some(n) => Err(Error::UnknownPatient(n.patient_id.0.clone())),
            None => Ok(()),
        }
    }

    /// Non-empty lines across all notes; the unit models are trained on.
    pub fn lines(&self) -> impl Iterator<Item = &str> {
        self.notes
            .iter()
            .flat_map(|n| n.text.lines())
            .map(str::trim)
            .filter(|l| !l.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
    Unknown,
}

impl Gender {
    pub fn parse(raw: &str) -> Self {
        match raw.trim().to_ascii_uppercase().as_str() {
            "M" | "MALE" => Gender::M,
            "F" | "FEMALE" => Gender::F,
            _ => Gender::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
            Gender::Unknown => "U",
        }
    }
}

/// Honorific emitted in templates, chosen by gender.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Honorifics {
    pub male: String,
    pub female: String,
    pub unknown: String,
}

impl Default for Honorifics {
    fn default() -> Self {
        Self {
            male: "Mr.".into(),
            female: "Mrs.".into(),
            unknown: "Mr.".into(),
        }
    }
}

impl Honorifics {
    pub fn for_gender(&self, gender: Gender) -> &str {
        match gender {
            Gender::M => &self.male,
            Gender::F => &self.female,
            Gender::Unknown => &self.unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: PatientId,
    pub first_name: String,
    pub last_name: String,
    pub gender: Gender,
    /// Name appears in at least one of the patient's own notes.
    pub reidentified: bool,
}

impl PatientRecord {
    pub fn full_name(&self) -> String {
        format!("{} {}", self.first_name, self.last_name)
    }
}

/// Patients keyed (and iterated) by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatientTable {
    records: BTreeMap<PatientId, PatientRecord>,
}

impl PatientTable {
    pub fn new(records: impl IntoIterator<Item = PatientRecord>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for r in records {
            let id = r.patient_id.clone();
            if map.insert(id.clone(), r).is_some() {
                return Err(Error::InvalidInput(format!("duplicate patient id `{id}`")));
            }
        }
        Ok(Self { records: map })
    }

    pub fn get(&self, id: &PatientId) -> Option<&PatientRecord> {
        self.records.get(id)
    }

    pub fn contains(&self, id: &PatientId) -> bool {
        self.records.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PatientRecord> {
        self.records.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &PatientId> {
        self.records.keys()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn reidentified_ids(&self) -> BTreeSet<PatientId> {
        self.iter()
            .filter(|r| r.reidentified)
            .map(|r| r.patient_id.clone())
            .collect()
    }

    /// Recomputes every `reidentified` flag from an exact scan of each
    /// patient's own notes.
    pub fn with_reidentified_scan(mut self, corpus: &NoteCorpus) -> Self {
        let by_patient = corpus.notes_by_patient();
        for record in self.records.values_mut() {
            let first = crate::text::tokenize(&record.first_name);
            let last = crate::text::tokenize(&record.last_name);
            record.reidentified = by_patient.get(&record.patient_id).is_some_and(|notes| {
                notes.iter().any(|n| {
                    let toks = crate::text::tokenize(&n.text);
                    crate::text::contains_token_seq(&toks, &first) || crate::text::contains_token_seq(&toks, &last)
                })
            });
        }
        self
    }
}
