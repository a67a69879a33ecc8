use std::path::Path;

use serde::Deserialize;

use super::{CorpusVariant, Gender, Note, NoteCategory, NoteCorpus, PatientId, PatientRecord, PatientTable};
use crate::error::{Error, Result};
use crate::io::{read_to_string, tsv_rows, write_atomic};

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    /// Keep notes outside the four retained categories.
    pub keep_all: bool,
    pub variant: CorpusVariant,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            keep_all: false,
            variant: CorpusVariant::Deidentified,
        }
    }
}

#[derive(Deserialize)]
struct RawNote {
    note_id: serde_json::Value,
    patient_id: serde_json::Value,
    category: String,
    text: String,
}

fn id_string(v: serde_json::Value) -> std::result::Result<String, String> {
    match v {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(format!("expected string or number id, got {other}")),
    }
}

/// Reads `notes.jsonl`, one `{note_id, patient_id, category, text}` object
/// per line.
pub fn load_notes(path: &Path, opts: &LoadOptions) -> Result<NoteCorpus> {
    let contents = read_to_string(path)?;
    let mut notes = Vec::new();
    let mut dropped = 0usize;
    for (i, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawNote = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        let note = Note {
            note_id: id_string(raw.note_id).map_err(|m| Error::parse(path, i + 1, m))?,
            patient_id: PatientId(id_string(raw.patient_id).map_err(|m| Error::parse(path, i + 1, m))?),
            category: NoteCategory::parse(&raw.category),
            text: raw.text,
        };
        if opts.keep_all || note.category.is_retained() {
            notes.push(note);
        } else {
            dropped += 1;
        }
    }
    if notes.is_empty() {
        log::warn!("{}: corpus is empty", path.display());
    }
    if dropped > 0 {
        log::info!("{}: dropped {dropped} notes outside the retained categories", path.display());
    }
    NoteCorpus::new(notes, opts.variant)
}

pub fn write_notes(path: &Path, corpus: &NoteCorpus) -> Result<()> {
    let mut out = Vec::new();
    for note in corpus.notes() {
        serde_json::to_writer(&mut out, note)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

/// Reads `patients.tsv`: `patient_id, first, last, gender`. Name columns may
/// be empty for deidentified inputs. An optional header row is skipped.
pub fn load_patients(path: &Path) -> Result<PatientTable> {
    let contents = read_to_string(path)?;
    let mut records = Vec::new();
    for (line, cols) in tsv_rows(&contents) {
        if line == 1 && cols[0].eq_ignore_ascii_case("patient_id") {
            continue;
        }
        if cols.len() != 4 {
            return Err(Error::parse(path, line, format!("expected 4 columns, found {}", cols.len())));
        }
        let gender = Gender::parse(cols[3]);
        if gender == Gender::Unknown {
            log::warn!("{}:{line}: gender `{}` is not M/F; default honorific applies", path.display(), cols[3]);
        }
        records.push(PatientRecord {
            patient_id: PatientId(cols[0].trim().to_string()),
            first_name: cols[1].trim().to_string(),
            last_name: cols[2].trim().to_string(),
            gender,
            reidentified: false,
        });
    }
    PatientTable::new(records)
}

pub fn write_patients(path: &Path, patients: &PatientTable) -> Result<()> {
    let mut out = String::from("patient_id\tfirst\tlast\tgender\n");
    for p in patients.iter() {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.patient_id,
            p.first_name,
            p.last_name,
            p.gender.as_str()
        ));
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn category_filter_applied() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("notes.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"note_id":"1","patient_id":"p1","category":"Nursing","text":"a"}"#,
                "\n",
                r#"{"note_id":"2","patient_id":"p1","category":"Radiology","text":"b"}"#,
                "\n",
                r#"{"note_id":3,"patient_id":7,"category":"Physician ","text":"c"}"#,
                "\n"
            ),
        )
        .unwrap();
        let corpus = load_notes(&path, &LoadOptions::default()).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.notes()[1].patient_id, PatientId("7".into()));
        let all = load_notes(
            &path,
            &LoadOptions {
                keep_all: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("notes.jsonl");
        fs::write(&path, "").unwrap();
        assert!(load_notes(&path, &LoadOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn malformed_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("notes.jsonl");
        fs::write(
            &path,
            "{\"note_id\":\"1\",\"patient_id\":\"p\",\"category\":\"Nursing\",\"text\":\"a\"}\n\n{\"note_id\":\"2\"}\n",
        )
        .unwrap();
        match load_notes(&path, &LoadOptions::default()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("notes.jsonl");
        let rec = r#"{"note_id":"dup-9","patient_id":"p","category":"Nursing","text":"a"}"#;
        fs::write(&path, format!("{rec}\n{rec}\n")).unwrap();
        let err = load_notes(&path, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateNote(ref id) if id == "dup-9"));
    }

    #[test]
    fn patients_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patients.tsv");
        fs::write(&path, "patient_id\tfirst\tlast\tgender\np1\tAnn\tLee\tF\np2\t\t\tM\n").unwrap();
        let table = load_patients(&path).unwrap();
        assert_eq!(table.len(), 2);
        let out = dir.path().join("out.tsv");
        write_patients(&out, &table).unwrap();
        assert_eq!(load_patients(&out).unwrap(), table);
    }
}
