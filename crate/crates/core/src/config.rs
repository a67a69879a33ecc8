//! The audit configuration: one TOML document, overridable from the command
//! line. Every field except `seed` has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::gen::GenConfig;
use crate::attack::probe::{FrequencyGroups, ProbeConfig};
use crate::corpus::synth::DemoSpec;
use crate::corpus::{Honorifics, NameSampling, DEFAULT_MARKER_PATTERN, DEFAULT_MIN_FIRST_COUNT, DEFAULT_MIN_LAST_COUNT};
use crate::error::{Error, Result};
use crate::metrics::BinWeighting;
use crate::scorer::{RemoteConfig, ToyConfig};
use crate::static_embed::{Pooling, W2vConfig, W2vMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Master seed; every other seed is derived from it by name.
    pub seed: Option<u64>,
    /// Output root. Not part of the serialized provenance: moving the
    /// output must not change the reports.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    /// `toy` or `remote:<url>`.
    pub scorer: String,
    pub data: DataConfig,
    pub demo: DemoSpec,
    pub names: NamesConfig,
    pub toy: ToyConfig,
    pub word2vec: EmbeddingsConfig,
    pub remote: RemoteConfig,
    pub attacks: AttacksConfig,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: PathBuf::from("out"),
            scorer: "toy".into(),
            data: DataConfig::default(),
            demo: DemoSpec::default(),
            names: NamesConfig::default(),
            toy: ToyConfig::default(),
            word2vec: EmbeddingsConfig::default(),
            remote: RemoteConfig::default(),
            attacks: AttacksConfig::default(),
        }
    }
}

/// Input files. With `demo = true` (or no notes file) a synthetic corpus is
/// generated instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub demo: bool,
    pub notes: Option<PathBuf>,
    pub patients: Option<PathBuf>,
    pub census_first: Option<PathBuf>,
    pub census_last: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    /// `patient_id<TAB>condition_id` labels. Without it, labels are
    /// extracted from the notes by dictionary match.
    pub annotations: Option<PathBuf>,
    pub keep_all_categories: bool,
    /// Name of the label set in reports.
    pub label_source: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            demo: true,
            notes: None,
            patients: None,
            census_first: None,
            census_last: None,
            catalog: None,
            annotations: None,
            keep_all_categories: false,
            label_source: "icd9".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NamesConfig {
    pub min_first_count: u64,
    pub min_last_count: u64,
    pub sampling: NameSampling,
    pub marker_pattern: String,
    pub honorifics: Honorifics,
}

impl Default for NamesConfig {
    fn default() -> Self {
        Self {
            min_first_count: DEFAULT_MIN_FIRST_COUNT,
            min_last_count: DEFAULT_MIN_LAST_COUNT,
            sampling: NameSampling::Weighted,
            marker_pattern: DEFAULT_MARKER_PATTERN.into(),
            honorifics: Honorifics::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsConfig {
    pub modes: Vec<W2vMode>,
    /// Corpus variants to train static embeddings on.
    pub variants: Vec<String>,
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negative: usize,
    pub alpha: f64,
    pub min_alpha: f64,
}

impl Default for EmbeddingsConfig {
    fn default() -> Self {
        let w = W2vConfig::default();
        Self {
            modes: vec![W2vMode::SkipGram, W2vMode::Cbow],
            variants: vec!["reidentified".into(), "name_insertion".into()],
            dim: w.dim,
            window: w.window,
            epochs: w.epochs,
            negative: w.negative,
            alpha: w.alpha,
            min_alpha: w.min_alpha,
        }
    }
}

impl EmbeddingsConfig {
    pub fn w2v(&self, mode: W2vMode, seed: u64) -> W2vConfig {
        W2vConfig {
            mode,
            dim: self.dim,
            window: self.window,
            epochs: self.epochs,
            negative: self.negative,
            alpha: self.alpha,
            min_alpha: self.min_alpha,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttacksConfig {
    /// Toy models (by corpus variant) audited when `scorer = "toy"`.
    pub variants: Vec<String>,
    pub weighting: BinWeighting,
    /// Cap on fill-in-the-blank target patients (first N by id).
    pub max_targets: Option<usize>,
    pub probe: ProbeConfig,
    pub name_probe: ProbeConfig,
    pub groups: FrequencyGroups,
    pub poolings: Vec<Pooling>,
    pub generate: GenConfig,
    /// Comparator for name re-ranking: `toy` (the model trained on the
    /// deidentified notes) or `remote:<url>`.
    pub comparator: String,
    /// Count names that are also common English words.
    pub include_common_words: bool,
}

impl Default for AttacksConfig {
    fn default() -> Self {
        Self {
            variants: vec!["reidentified".into(), "name_insertion".into(), "template_only".into()],
            weighting: BinWeighting::Equal,
            max_targets: None,
            probe: ProbeConfig::default(),
            name_probe: ProbeConfig::logistic(0),
            groups: FrequencyGroups::default(),
            poolings: vec![Pooling::Mean, Pooling::Max, Pooling::AllPairs],
            generate: GenConfig {
                num_samples: 200,
                ..GenConfig::default()
            },
            comparator: "toy".into(),
            include_common_words: false,
        }
    }
}

pub const VARIANTS: [&str; 4] = ["deidentified", "reidentified", "name_insertion", "template_only"];

/// Overrides given on the command line; set fields win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scorer: Option<String>,
}

impl AuditConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::io::read_to_string(path)?)
    }

    /// Reads `path` (or starts from defaults), applies the overrides and
    /// validates.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            config.seed = Some(s);
        }
        if let Some(o) = &overrides.out {
            config.out = o.clone();
        }
        if let Some(s) = &overrides.scorer {
            config.scorer = s.clone();
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(Error::Config("a master seed is required (`seed = …` or --seed)".into()));
        }
        ScorerSpec::parse(&self.scorer)?;
        ScorerSpec::parse(&self.attacks.comparator)?;
        self.toy.validate()?;
        for v in self.attacks.variants.iter().chain(&self.word2vec.variants) {
            if !VARIANTS.contains(&v.as_str()) {
                return Err(Error::Config(format!("unknown corpus variant `{v}`")));
            }
        }
        let d = &self.data;
        if !d.demo && d.notes.is_none() {
            return Err(Error::Config("data.notes is required unless data.demo = true".into()));
        }
        if !d.demo {
            for p in [&d.notes, &d.patients, &d.census_first, &d.census_last, &d.catalog, &d.annotations]
                .into_iter()
                .flatten()
            {
                if !p.exists() {
                    return Err(Error::Config(format!("{} does not exist", p.display())));
                }
            }
            if d.patients.is_none() {
                return Err(Error::Config("data.patients is required with data.notes".into()));
            }
            if d.census_first.is_some() != d.census_last.is_some() {
                return Err(Error::Config("give both census files or neither".into()));
            }
        }
        Ok(())
    }

    pub fn master_seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerSpec {
    Toy,
    Remote(String),
}

impl ScorerSpec {
    pub fn parse(raw: &str) -> Result<Self> {
        match raw {
            "toy" => Ok(ScorerSpec::Toy),
            _ => match raw.strip_prefix("remote:") {
                Some(url) if !url.is_empty() => Ok(ScorerSpec::Remote(url.to_string())),
                _ => Err(Error::Config(format!("scorer must be `toy` or `remote:<url>`, got `{raw}`"))),
            },
        }
    }
}
