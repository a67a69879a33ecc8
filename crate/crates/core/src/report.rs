//! Report files: one CSV plus a JSON sidecar per attack, and a
//! consolidated pair built from a directory of them.
//!
//! CSV columns, in order:
//!
//! | column        | meaning                                                  |
//! |---------------|----------------------------------------------------------|
//! | `attack`      | attack name (`fib`, `prior`, `probe`, …)                 |
//! | `model_tag`   | scorer or embedding identity; `frequency_baseline` for the baseline |
//! | `label_source`| where condition labels came from (`icd9`, `annotation`, …) |
//! | `bin`         | piece-count bin, frequency group, metric name, or `all`  |
//! | `auc`         | AUC                                                      |
//! | `a_at_10`     | accuracy at 10                                           |
//! | `spearman`    | Spearman correlation against condition frequency         |
//! | `pooling`     | cosine pooling mode                                      |
//! | `source`      | embedding source or probe template                       |
//! | `value_mean`  | mean of a statistic (cosine Δ, generation percentage)    |
//! | `value_std`   | its standard deviation                                   |
//! | `count`       | number of patients / probes / items behind the row       |
//!
//! Empty cells mean "not applicable" or "undefined". Reals are written with
//! six decimals.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "attack,model_tag,label_source,bin,auc,a_at_10,spearman,pooling,source,value_mean,value_std,count";

pub const CONSOLIDATED: &str = "report";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub attack: String,
    pub model_tag: String,
    pub label_source: String,
    pub bin: String,
    pub auc: Option<f64>,
    pub a_at_10: Option<f64>,
    pub spearman: Option<f64>,
    pub pooling: Option<String>,
    pub source: Option<String>,
    pub value_mean: Option<f64>,
    pub value_std: Option<f64>,
    pub count: Option<usize>,
}

impl ReportRow {
    pub fn new(attack: &str, model_tag: &str, label_source: &str, bin: impl Into<String>) -> Self {
        Self {
            attack: attack.into(),
            model_tag: model_tag.into(),
            label_source: label_source.into(),
            bin: bin.into(),
            ..Default::default()
        }
    }

    fn csv_line(&self) -> String {
        let real = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        let text = |s: Option<&str>| s.map(csv_field).unwrap_or_default();
        [
            csv_field(&self.attack),
            csv_field(&self.model_tag),
            csv_field(&self.label_source),
            csv_field(&self.bin),
            real(self.auc),
            real(self.a_at_10),
            real(self.spearman),
            text(self.pooling.as_deref()),
            text(self.source.as_deref()),
            real(self.value_mean),
            real(self.value_std),
            self.count.map(|c| c.to_string()).unwrap_or_default(),
        ]
        .join(",")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Rows from one attack run together with the resolved configuration and
/// seeds that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: String,
    pub meta: serde_json::Value,
    pub rows: Vec<ReportRow>,
}

impl AttackReport {
    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    /// Writes `<dir>/<attack>.csv` and `<dir>/<attack>.json`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let csv = dir.join(format!("{}.csv", self.attack));
        let json = dir.join(format!("{}.json", self.attack));
        crate::io::write_atomic(&csv, self.to_csv().as_bytes())?;
        crate::io::write_json_pretty(&json, self)?;
        Ok((csv, json))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&crate::io::read_to_string(path)?)?)
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Concatenates every attack sidecar in `dir` (in file-name order) into
/// `report.csv` / `report.json`.
pub fn consolidate(dir: &Path) -> Result<AttackReport> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut sidecars: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .filter(|p| p.file_stem().is_some_and(|s| s != CONSOLIDATED))
        .collect();
    sidecars.sort();
    let mut rows = Vec::new();
    let mut sections = serde_json::Map::new();
    for path in &sidecars {
        let Ok(report) = AttackReport::load(path) else {
            log::debug!("{} is not an attack report; skipped", path.display());
            continue;
        };
        sections.insert(report.attack.clone(), report.meta);
        rows.extend(report.rows);
    }
    if sections.is_empty() {
        return Err(Error::InvalidInput(format!("no attack reports found in {}", dir.display())));
    }
    let report = AttackReport {
        attack: CONSOLIDATED.into(),
        meta: serde_json::Value::Object(sections),
        rows,
    };
    report.write(dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_formatting() {
        let mut r = ReportRow::new("fib", "toy,k=8", "icd9", "all");
        r.auc = Some(0.5);
        r.count = Some(3);
        assert_eq!(r.csv_line(), "fib,\"toy,k=8\",icd9,all,0.500000,,,,,,,3");
        assert_eq!(CSV_HEADER.split(',').count(), r.csv_line().split(",").count() - 1);
    }

    #[test]
    fn consolidate_empty_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(consolidate(dir.path()).is_err());
    }
}
