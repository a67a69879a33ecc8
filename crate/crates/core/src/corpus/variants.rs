use std::ops::Range;

use super::{ConditionCatalog, ConditionMatrix, CorpusVariant, Honorifics, Note, NoteCategory, NoteCorpus, PatientTable};
use crate::error::{Error, Result};

/// Rule-based sentence boundaries. A sentence ends after a terminator that
/// is followed by whitespace (or the end of the text); a newline always ends
/// one. The trailing whitespace run belongs to the sentence it follows, so
/// the spans partition the text.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    terminators: Vec<char>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self {
            terminators: vec!['.', '!', '?', '\n'],
        }
    }
}

impl SentenceSplitter {
    pub fn new(terminators: Vec<char>) -> Self {
        Self { terminators }
    }

    pub fn split(&self, text: &str) -> Vec<Range<usize>> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut spans = Vec::new();
        let mut start = 0;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i].1;
            let next_ws = chars.get(i + 1).is_none_or(|(_, n)| n.is_whitespace());
            if self.terminators.contains(&c) && (c == '\n' || next_ws) {
                let mut j = i + 1;
                while j < chars.len() && chars[j].1.is_whitespace() {
                    j += 1;
                }
                let end = chars.get(j).map_or(text.len(), |(b, _)| *b);
                spans.push(start..end);
                start = end;
                i = j;
            } else {
                i += 1;
            }
        }
        if start < text.len() {
            spans.push(start..text.len());
        }
        spans
    }
}

pub fn split_sentences(text: &str) -> Vec<Range<usize>> {
    SentenceSplitter::default().split(text)
}

/// Prefixes every sentence of every note with the owner's "First Last ".
pub fn build_name_insertion(corpus: &NoteCorpus, patients: &PatientTable, splitter: &SentenceSplitter) -> Result<NoteCorpus> {
    if corpus.variant() != CorpusVariant::Reidentified {
        return Err(Error::InvalidInput(format!(
            "name insertion needs a reidentified corpus, got {:?}",
            corpus.variant()
        )));
    }
    let mut notes = Vec::with_capacity(corpus.len());
    for note in corpus.notes() {
        let owner = patients
            .get(&note.patient_id)
            .ok_or_else(|| Error::UnknownPatient(note.patient_id.0.clone()))?;
        let prefix = format!("{} ", owner.full_name());
        let mut text = String::with_capacity(note.text.len() + 16 * prefix.len());
        for span in splitter.split(&note.text) {
            let sentence = &note.text[span];
            match sentence.find(|c: char| !c.is_whitespace()) {
                Some(offset) => {
                    text.push_str(&sentence[..offset]);
                    text.push_str(&prefix);
                    text.push_str(&sentence[offset..]);
                }
                None => text.push_str(sentence),
            }
        }
        notes.push(Note { text, ..note.clone() });
    }
    NoteCorpus::new(notes, CorpusVariant::NameInsertion)
}

pub const TEMPLATE_ONLY_PREFIX: &str = "template-";

/// One line per (patient, positive condition):
/// `Mr./Mrs. First Last is a yo patient with Condition`.
pub fn build_template_only(
    matrix: &ConditionMatrix,
    patients: &PatientTable,
    catalog: &ConditionCatalog,
    honorifics: &Honorifics,
) -> Result<NoteCorpus> {
    let mut notes = Vec::new();
    for (p, pid) in matrix.patients().iter().enumerate() {
        let positives = matrix.positives_of(p);
        if positives.is_empty() {
            continue;
        }
        let record = patients.get(pid).ok_or_else(|| Error::UnknownPatient(pid.0.clone()))?;
        let honorific = honorifics.for_gender(record.gender);
        let lines: Vec<String> = positives
            .iter()
            .map(|&c| {
                let cid = &matrix.conditions()[c];
                let idx = catalog
                    .index_of(cid)
                    .ok_or_else(|| Error::UnknownConditions(vec![cid.0.clone()]))?;
                Ok(format!(
                    "{honorific} {} {} is a yo patient with {}",
                    record.first_name,
                    record.last_name,
                    catalog.get(idx).description
                ))
            })
            .collect::<Result<_>>()?;
        notes.push(Note {
            note_id: format!("{TEMPLATE_ONLY_PREFIX}{pid}"),
            patient_id: pid.clone(),
            category: NoteCategory::Other,
            text: lines.join("\n"),
        });
    }
    NoteCorpus::new(notes, CorpusVariant::TemplateOnly)
}
