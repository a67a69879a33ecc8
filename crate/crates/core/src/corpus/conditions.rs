use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConditionId, NoteCorpus, PatientId, PatientTable};
use crate::error::{Error, Result};
use crate::io::{read_to_string, tsv_rows, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionSource {
    #[serde(rename = "ICD9")]
    Icd9,
    Annotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub condition_id: ConditionId,
    pub description: String,
    pub source: ConditionSource,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionCatalog {
    conditions: Vec<Condition>,
    index: HashMap<ConditionId, usize>,
}

impl ConditionCatalog {
    pub fn new(conditions: Vec<Condition>) -> Result<Self> {
        let mut index = HashMap::with_capacity(conditions.len());
        for (i, c) in conditions.iter().enumerate() {
            if c.description.trim().is_empty() {
                return Err(Error::InvalidInput(format!("condition `{}` has an empty description", c.condition_id)));
            }
            if index.insert(c.condition_id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate condition id `{}`", c.condition_id)));
            }
        }
        Ok(Self { conditions, index })
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter()
    }

    pub fn get(&self, idx: usize) -> &Condition {
        &self.conditions[idx]
    }

    pub fn index_of(&self, id: &ConditionId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Catalog restricted to the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self::new(indices.iter().map(|&i| self.conditions[i].clone()).collect()).expect("subset of a valid catalog")
    }
}

/// Reads `code<TAB>description` rows (the ICD-9 short description layout,
/// also used for annotation concept lists).
pub fn load_catalog(path: &Path, source: ConditionSource) -> Result<ConditionCatalog> {
    let contents = read_to_string(path)?;
    let mut conditions = Vec::new();
    for (line, cols) in tsv_rows(&contents) {
        if cols.len() < 2 || cols[1].trim().is_empty() {
            return Err(Error::parse(path, line, "expected code<TAB>description"));
        }
        conditions.push(Condition {
            condition_id: ConditionId(cols[0].trim().to_string()),
            description: cols[1].trim().to_string(),
            source,
        });
    }
    ConditionCatalog::new(conditions)
}

pub fn write_catalog(path: &Path, catalog: &ConditionCatalog) -> Result<()> {
    let mut out = String::new();
    for c in catalog.iter() {
        out.push_str(&format!("{}\t{}\n", c.condition_id, c.description));
    }
    write_atomic(path, out.as_bytes())
}

/// Binary patient × condition labels with cached per-condition counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMatrix {
    patients: Vec<PatientId>,
    patient_index: BTreeMap<PatientId, usize>,
    conditions: Vec<ConditionId>,
    positives: Vec<BTreeSet<usize>>,
    counts: Vec<usize>,
}

impl ConditionMatrix {
    pub fn empty(patients: &PatientTable, catalog: &ConditionCatalog) -> Self {
        let ids: Vec<PatientId> = patients.ids().cloned().collect();
        Self::with_ids(ids, catalog.iter().map(|c| c.condition_id.clone()).collect())
    }

    pub fn with_ids(patients: Vec<PatientId>, conditions: Vec<ConditionId>) -> Self {
        let patient_index = patients.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Self {
            positives: vec![BTreeSet::new(); patients.len()],
            counts: vec![0; conditions.len()],
            patients,
            patient_index,
            conditions,
        }
    }

    pub fn set(&mut self, patient: usize, condition: usize) {
        if self.positives[patient].insert(condition) {
            self.counts[condition] += 1;
        }
    }

    pub fn get(&self, patient: usize, condition: usize) -> bool {
        self.positives[patient].contains(&condition)
    }

    pub fn patients(&self) -> &[PatientId] {
        &self.patients
    }

    pub fn conditions(&self) -> &[ConditionId] {
        &self.conditions
    }

    pub fn patient_index(&self, id: &PatientId) -> Option<usize> {
        self.patient_index.get(id).copied()
    }

    pub fn num_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn num_conditions(&self) -> usize {
        self.conditions.len()
    }

    /// Condition indices the patient has, ascending.
    pub fn positives_of(&self, patient: usize) -> &BTreeSet<usize> {
        &self.positives[patient]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn positive_cells(&self) -> usize {
        self.positives.iter().map(BTreeSet::len).sum()
    }

    /// Labels for one patient across all conditions.
    pub fn row(&self, patient: usize) -> Vec<bool> {
        (0..self.conditions.len()).map(|c| self.get(patient, c)).collect()
    }

    /// Cached counts agree with recomputed column sums.
    pub fn counts_consistent(&self) -> bool {
        let mut recount = vec![0usize; self.conditions.len()];
        for row in &self.positives {
            for &c in row {
                recount[c] += 1;
            }
        }
        recount == self.counts
    }

    /// Keeps conditions whose patient count lies in `[min, max]`; returns the
    /// retained original condition indices alongside the new matrix.
    pub fn restrict_by_count(&self, min: usize, max: usize) -> (Vec<usize>, Self) {
        let keep: Vec<usize> = (0..self.conditions.len())
            .filter(|&c| (min..=max).contains(&self.counts[c]))
            .collect();
        let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let mut out = Self::with_ids(
            self.patients.clone(),
            keep.iter().map(|&c| self.conditions[c].clone()).collect(),
        );
        for (p, row) in self.positives.iter().enumerate() {
            for c in row {
                if let Some(&n) = remap.get(c) {
                    out.set(p, n);
                }
            }
        }
        (keep, out)
    }
}

/// Builds the matrix from `patient_id<TAB>condition_id` rows.
pub fn load_annotations(path: &Path, patients: &PatientTable, catalog: &ConditionCatalog) -> Result<ConditionMatrix> {
    let contents = read_to_string(path)?;
    let mut matrix = ConditionMatrix::empty(patients, catalog);
    let mut unknown = BTreeSet::new();
    for (line, cols) in tsv_rows(&contents) {
        if cols.len() < 2 {
            return Err(Error::parse(path, line, "expected patient_id<TAB>condition_id"));
        }
        let pid = PatientId(cols[0].trim().to_string());
        let cid = ConditionId(cols[1].trim().to_string());
        let p = matrix
            .patient_index(&pid)
            .ok_or_else(|| Error::UnknownPatient(pid.0.clone()))?;
        match catalog.index_of(&cid) {
            Some(c) => matrix.set(p, c),
            None => {
                unknown.insert(cid.0);
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownConditions(unknown.into_iter().collect()));
    }
    Ok(matrix)
}

pub fn write_annotations(path: &Path, matrix: &ConditionMatrix) -> Result<()> {
    let mut out = String::new();
    for (p, pid) in matrix.patients().iter().enumerate() {
        for &c in matrix.positives_of(p) {
            out.push_str(&format!("{}\t{}\n", pid, matrix.conditions()[c]));
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Marks a condition positive iff its description occurs
/// (case-insensitively) in any of the patient's notes.
pub fn dictionary_extract(corpus: &NoteCorpus, patients: &PatientTable, catalog: &ConditionCatalog) -> ConditionMatrix {
    let mut matrix = ConditionMatrix::empty(patients, catalog);
    let needles: Vec<String> = catalog.iter().map(|c| c.description.to_lowercase()).collect();
    for (pid, notes) in corpus.notes_by_patient() {
        let Some(p) = matrix.patient_index(pid) else { continue };
        let texts: Vec<String> = notes.iter().map(|n| n.text.to_lowercase()).collect();
        for (c, needle) in needles.iter().enumerate() {
            if texts.iter().any(|t| t.contains(needle.as_str())) {
                matrix.set(p, c);
            }
        }
    }
    matrix
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusVariant, Gender, Note, NoteCategory, PatientRecord};
    use std::fs;

    fn patients(n: usize) -> PatientTable {
        PatientTable::new((1..=n).map(|i| PatientRecord {
            patient_id: format!("p{i}").as_str().into(),
            first_name: "A".into(),
            last_name: "B".into(),
            gender: Gender::M,
            reidentified: false,
        }))
        .unwrap()
    }

    fn catalog(descs: &[&str]) -> ConditionCatalog {
        ConditionCatalog::new(
            descs
                .iter()
                .enumerate()
                .map(|(i, d)| Condition {
                    condition_id: format!("c{}", i + 1).as_str().into(),
                    description: d.to_string(),
                    source: ConditionSource::Icd9,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn annotations_single_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.tsv");
        fs::write(&path, "p1\tc1\n").unwrap();
        let m = load_annotations(&path, &patients(2), &catalog(&["x", "y"])).unwrap();
        assert!(m.get(0, 0));
        assert_eq!(m.positive_cells(), 1);
        assert_eq!(m.counts(), &[1, 0]);
    }

    #[test]
    fn annotations_unknown_conditions_listed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.tsv");
        fs::write(&path, "p1\tc9\np2\tc7\np1\tc1\np2\tc9\n").unwrap();
        let err = load_annotations(&path, &patients(2), &catalog(&["x"])).unwrap_err();
        match err {
            Error::UnknownConditions(ids) => assert_eq!(ids, vec!["c7".to_string(), "c9".to_string()]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn dictionary_match_case_folds() {
        let corpus = NoteCorpus::new(
            vec![Note {
                note_id: "n".into(),
                patient_id: "p1".into(),
                category: NoteCategory::Nursing,
                text: "pt with mrsa in wound".into(),
            }],
            CorpusVariant::Reidentified,
        )
        .unwrap();
        let m = dictionary_extract(&corpus, &patients(2), &catalog(&["MRSA", "Sepsis"]));
        assert!(m.get(0, 0));
        assert!(!m.get(0, 1));
        assert!(!m.get(1, 0));
    }

    #[test]
    fn restrict_keeps_counts_consistent() {
        let mut m = ConditionMatrix::empty(&patients(3), &catalog(&["a", "b", "c"]));
        m.set(0, 0);
        m.set(1, 0);
        m.set(2, 0);
        m.set(0, 1);
        m.set(0, 1);
        assert!(m.counts_consistent());
        let (keep, r) = m.restrict_by_count(1, 2);
        assert_eq!(keep, vec![1]);
        assert_eq!(r.counts(), &[1]);
        assert!(r.counts_consistent());
    }

    #[test]
    fn catalog_rejects_duplicates_and_blank() {
        assert!(ConditionCatalog::new(vec![
            Condition { condition_id: "a".into(), description: "x".into(), source: ConditionSource::Icd9 },
            Condition { condition_id: "a".into(), description: "y".into(), source: ConditionSource::Icd9 },
        ])
        .is_err());
        assert!(ConditionCatalog::new(vec![Condition {
            condition_id: "a".into(),
            description: " ".into(),
            source: ConditionSource::Icd9
        }])
        .is_err());
    }
}
