use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{NoteCorpus, PatientId, PatientTable};
use crate::lexicon::is_common_word;
use crate::text::{contains_token_seq, tokenize};

/// Name-mention statistics over a reidentified corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub notes: usize,
    pub patients: usize,
    /// Patients whose first or last name appears in one of their own notes.
    pub patients_mentioned: usize,
    pub notes_with_first: usize,
    pub notes_with_last: usize,
    pub notes_with_any: usize,
    pub fraction_notes_with_mention: f64,
    /// Occurrences of a name owned by some other patient (and not the note's
    /// owner).
    pub false_positive_other_patient: usize,
    /// Occurrences of the owner's name where that name is also a common word.
    pub false_positive_common_word: usize,
}

fn count_occurrences(tokens: &[String], needle: &[String]) -> usize {
    if needle.is_empty() || needle.len() > tokens.len() {
        return 0;
    }
    tokens.windows(needle.len()).filter(|w| *w == needle).count()
}

pub fn corpus_stats(corpus: &NoteCorpus, patients: &PatientTable) -> CorpusStats {
    let mut owners: HashMap<Vec<String>, BTreeSet<&PatientId>> = HashMap::new();
    for p in patients.iter() {
        for name in [&p.first_name, &p.last_name] {
            let toks = tokenize(name);
            if !toks.is_empty() {
                owners.entry(toks).or_default().insert(&p.patient_id);
            }
        }
    }
    let lengths: BTreeSet<usize> = owners.keys().map(Vec::len).collect();

    let mut mentioned: BTreeSet<&PatientId> = BTreeSet::new();
    let (mut with_first, mut with_last, mut with_any) = (0, 0, 0);
    let (mut fp_other, mut fp_common) = (0, 0);
    for note in corpus.notes() {
        let toks = tokenize(&note.text);
        let Some(owner) = patients.get(&note.patient_id) else { continue };
        let first = tokenize(&owner.first_name);
        let last = tokenize(&owner.last_name);
        let has_first = contains_token_seq(&toks, &first);
        let has_last = contains_token_seq(&toks, &last);
        with_first += usize::from(has_first);
        with_last += usize::from(has_last);
        if has_first || has_last {
            with_any += 1;
            mentioned.insert(&owner.patient_id);
        }
        for (name, raw) in [(&first, &owner.first_name), (&last, &owner.last_name)] {
            if is_common_word(raw) {
                fp_common += count_occurrences(&toks, name);
            }
        }
        for &len in &lengths {
            if len > toks.len() {
                break;
            }
            for w in toks.windows(len) {
                if w == first.as_slice() || w == last.as_slice() {
                    continue;
                }
                if owners.get(w).is_some_and(|o| !o.contains(&owner.patient_id)) {
                    fp_other += 1;
                }
            }
        }
    }
    CorpusStats {
        notes: corpus.len(),
        patients: patients.len(),
        patients_mentioned: mentioned.len(),
        notes_with_first: with_first,
        notes_with_last: with_last,
        notes_with_any: with_any,
        fraction_notes_with_mention: if corpus.is_empty() {
            0.0
        } else {
            with_any as f64 / corpus.len() as f64
        },
        false_positive_other_patient: fp_other,
        false_positive_common_word: fp_common,
    }
}
