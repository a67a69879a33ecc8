//! The `synth → train → attack → report` pipeline over an output directory:
//!
//! ```text
//! <out>/corpus/   deidentified.jsonl reidentified.jsonl name_insertion.jsonl
//!                 template_only.jsonl patients.tsv catalog.tsv
//!                 annotations.tsv stats.json
//! <out>/models/   toy-<variant>.json w2v-<mode>-<variant>.txt manifest.json
//! <out>/reports/  <attack>.csv <attack>.json report.csv report.json
//! <out>/generate/<model>/ samples.jsonl mentions.jsonl
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::attack::cosine::{leakage_score, vocab_audit, EmbeddingSource};
use crate::attack::fib::{length_bins, run_condition_attack, run_condition_prior_attack, run_frequency_baseline, run_name_part_attack, FibOptions};
use crate::attack::gen::{comparator_scores, detect_names, evaluate_generation, rank_names, run_generation, GenConfig, Mention, NameGazetteer, Sample};
use crate::attack::probe::{run_multi_condition_probe, run_name_membership_probe, run_per_condition_probes, ProbeConfig, ProbeTemplate};
use crate::attack::shuffle_patient_labels;
use crate::config::{AuditConfig, ScorerSpec, VARIANTS};
use crate::corpus::synth::{bundled_icd9, demo};
use crate::corpus::{
    assign_names, build_name_insertion, build_template_only, corpus_stats, dictionary_extract, load_annotations,
    load_catalog, load_census_names, load_notes, load_patients, write_annotations, write_catalog, write_notes,
    write_patients, ConditionCatalog, ConditionMatrix, ConditionSource, CorpusVariant, LoadOptions, MarkerPattern,
    NameStats, NamePool, NoteCorpus, PatientId, PatientTable, SentenceSplitter,
};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic, write_json_pretty};
use crate::report::{consolidate, AttackReport, ReportRow};
use crate::scorer::{Capability, RemoteConfig, RemoteScorer, ScorerHandle, TemplateKind, ToyScorer};
use crate::seeds::sub_seed;
use crate::static_embed::{train_word2vec, EmbeddingTable, W2vMode};

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn generate(&self, tag: &str) -> PathBuf {
        self.root.join("generate").join(tag)
    }

    pub fn variant_notes(&self, variant: &str) -> PathBuf {
        self.corpus().join(format!("{variant}.jsonl"))
    }

    pub fn toy(&self, variant: &str) -> PathBuf {
        self.models().join(format!("toy-{variant}.json"))
    }

    pub fn w2v(&self, mode: W2vMode, variant: &str) -> PathBuf {
        self.models().join(format!("w2v-{}-{variant}.txt", mode_name(mode)))
    }
}

fn mode_name(mode: W2vMode) -> &'static str {
    match mode {
        W2vMode::SkipGram => "skipgram",
        W2vMode::Cbow => "cbow",
    }
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn variant_of(name: &str) -> CorpusVariant {
    match name {
        "deidentified" => CorpusVariant::Deidentified,
        "reidentified" => CorpusVariant::Reidentified,
        "name_insertion" => CorpusVariant::NameInsertion,
        _ => CorpusVariant::TemplateOnly,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthStats {
    pub notes: BTreeMap<String, usize>,
    pub names: NameStats,
    pub corpus: crate::corpus::CorpusStats,
    pub conditions: usize,
    pub positive_cells: usize,
}

/// Builds the three training variants (plus the deidentified source) and
/// writes them with patients, catalog, labels and statistics.
pub fn cmd_synth(config: &AuditConfig) -> Result<SynthStats> {
    let master = config.master_seed();
    let d = &config.data;
    let (corpus, patients, catalog, matrix) = if d.demo {
        let data = demo(&config.demo, sub_seed(master, "demo"))?;
        (data.corpus, data.patients, data.catalog, data.matrix)
    } else {
        let notes = d.notes.as_deref().expect("validated");
        let corpus = load_notes(
            notes,
            &LoadOptions {
                keep_all: d.keep_all_categories,
                variant: CorpusVariant::Deidentified,
            },
        )?;
        let patients = load_patients(d.patients.as_deref().expect("validated"))?;
        corpus.check_patients(&patients)?;
        let catalog = match &d.catalog {
            Some(p) => load_catalog(p, ConditionSource::Icd9)?,
            None => bundled_icd9(),
        };
        let matrix = match &d.annotations {
            Some(p) => load_annotations(p, &patients, &catalog)?,
            None => dictionary_extract(&corpus, &patients, &catalog),
        };
        (corpus, patients, catalog, matrix)
    };
    let pool = match (&d.census_first, &d.census_last) {
        (Some(f), Some(l)) => load_census_names(f, l, config.names.min_first_count, config.names.min_last_count)?,
        _ => NamePool::bundled_sample(),
    };
    let marker = MarkerPattern::new(&config.names.marker_pattern)?;
    let reid = assign_names(&corpus, &patients, &pool, sub_seed(master, "names"), &marker, config.names.sampling)?;
    let patients = reid.patients.with_reidentified_scan(&reid.corpus);
    let insertion = build_name_insertion(&reid.corpus, &patients, &SentenceSplitter::default())?;
    let template = build_template_only(&matrix, &patients, &catalog, &config.names.honorifics)?;

    let layout = Layout::new(&config.out);
    mkdir(&layout.corpus())?;
    let mut counts = BTreeMap::new();
    for (name, c) in [
        ("deidentified", &corpus),
        ("reidentified", &reid.corpus),
        ("name_insertion", &insertion),
        ("template_only", &template),
    ] {
        write_notes(&layout.variant_notes(name), c)?;
        counts.insert(name.to_string(), c.len());
    }
    write_patients(&layout.corpus().join("patients.tsv"), &patients)?;
    write_catalog(&layout.corpus().join("catalog.tsv"), &catalog)?;
    write_annotations(&layout.corpus().join("annotations.tsv"), &matrix)?;
    let stats = SynthStats {
        notes: counts,
        names: reid.stats,
        corpus: corpus_stats(&reid.corpus, &patients),
        conditions: catalog.len(),
        positive_cells: matrix.positive_cells(),
    };
    write_json_pretty(&layout.corpus().join("stats.json"), &stats)?;
    Ok(stats)
}

/// What `synth` wrote, read back.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Reidentified flags recomputed from the reidentified variant.
    pub patients: PatientTable,
    pub catalog: ConditionCatalog,
    pub matrix: ConditionMatrix,
}

pub fn load_variant(layout: &Layout, variant: &str) -> Result<NoteCorpus> {
    load_notes(
        &layout.variant_notes(variant),
        &LoadOptions {
            keep_all: true,
            variant: variant_of(variant),
        },
    )
}

pub fn load_dataset(layout: &Layout) -> Result<Dataset> {
    let dir = layout.corpus();
    let reid = load_variant(layout, "reidentified")?;
    let patients = load_patients(&dir.join("patients.tsv"))?.with_reidentified_scan(&reid);
    let catalog = load_catalog(&dir.join("catalog.tsv"), ConditionSource::Icd9)?;
    let matrix = load_annotations(&dir.join("annotations.tsv"), &patients, &catalog)?;
    Ok(Dataset {
        patients,
        catalog,
        matrix,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    All,
    Toy,
    Embeddings,
}

impl FromStr for TrainTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TrainTarget::All),
            "toy" => Ok(TrainTarget::Toy),
            "embeddings" => Ok(TrainTarget::Embeddings),
            _ => Err(Error::Config(format!("unknown train target `{s}`"))),
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn toy_variants(config: &AuditConfig) -> Vec<String> {
    let mut v: Vec<String> = config.attacks.variants.clone();
    if !v.iter().any(|x| x == "deidentified") {
        v.push("deidentified".into());
    }
    v.sort_by_key(|x| VARIANTS.iter().position(|y| y == x));
    v.dedup();
    v
}

/// Trains the toy models and static embeddings; returns artifact checksums
/// (also written to `models/manifest.json`).
pub fn cmd_train(config: &AuditConfig, target: TrainTarget) -> Result<BTreeMap<String, String>> {
    let master = config.master_seed();
    let layout = Layout::new(&config.out);
    mkdir(&layout.models())?;
    let manifest_path = layout.models().join("manifest.json");
    let mut manifest: BTreeMap<String, String> = match read_to_string(&manifest_path) {
        Ok(s) => serde_json::from_str(&s)?,
        Err(_) => BTreeMap::new(),
    };
    let mut record = |path: &Path| -> Result<()> {
        let name = path.file_name().expect("file").to_string_lossy().into_owned();
        manifest.insert(name, sha256_file(path)?);
        Ok(())
    };
    if target != TrainTarget::Embeddings {
        for variant in toy_variants(config) {
            let corpus = load_variant(&layout, &variant)?;
            let toy_config = crate::scorer::ToyConfig {
                seed: sub_seed(master, &format!("toy-{variant}")),
                ..config.toy.clone()
            };
            let toy = ToyScorer::train(corpus.lines(), toy_config)?;
            let path = layout.toy(&variant);
            toy.save(&path)?;
            record(&path)?;
            log::info!("trained toy-{variant}: {} tokens in vocab", toy.vocab().len());
        }
    }
    if target != TrainTarget::Toy {
        for variant in &config.word2vec.variants {
            let corpus = load_variant(&layout, variant)?;
            for &mode in &config.word2vec.modes {
                let seed = sub_seed(master, &format!("w2v-{}-{variant}", mode_name(mode)));
                let trained = train_word2vec(corpus.lines(), &config.word2vec.w2v(mode, seed))?;
                let path = layout.w2v(mode, variant);
                trained.table.save_text(&path)?;
                record(&path)?;
            }
        }
    }
    write_json_pretty(&manifest_path, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AttackName {
    Fib,
    Prior,
    Probe,
    PerCondition,
    NameProbe,
    Cosine,
    NamePart,
    Generate,
    All,
}

impl AttackName {
    pub const EACH: [AttackName; 8] = [
        AttackName::Fib,
        AttackName::Prior,
        AttackName::Probe,
        AttackName::PerCondition,
        AttackName::NameProbe,
        AttackName::Cosine,
        AttackName::NamePart,
        AttackName::Generate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackName::Fib => "fib",
            AttackName::Prior => "prior",
            AttackName::Probe => "probe",
            AttackName::PerCondition => "per-condition",
            AttackName::NameProbe => "name-probe",
            AttackName::Cosine => "cosine",
            AttackName::NamePart => "name-part",
            AttackName::Generate => "generate",
            AttackName::All => "all",
        }
    }
}

impl FromStr for AttackName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackName::EACH
            .into_iter()
            .chain([AttackName::All])
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack `{s}`")))
    }
}

/// An audited model and the corpus variant it stands for, if known.
struct Target {
    scorer: ScorerHandle,
    variant: Option<String>,
}

fn open_scorer(spec: &ScorerSpec, config: &AuditConfig, layout: &Layout, toy_variant: &str) -> Result<ScorerHandle> {
    Ok(match spec {
        ScorerSpec::Toy => {
            let path = layout.toy(toy_variant);
            ScorerHandle::new(ToyScorer::load(&path)?.with_tag(format!("toy-{toy_variant}")))
        }
        ScorerSpec::Remote(url) => ScorerHandle::new(RemoteScorer::connect(RemoteConfig {
            endpoint: url.clone(),
            ..config.remote.clone()
        })?),
    })
}

fn targets(config: &AuditConfig, layout: &Layout) -> Result<Vec<Target>> {
    let spec = ScorerSpec::parse(&config.scorer)?;
    match spec {
        ScorerSpec::Toy => config
            .attacks
            .variants
            .iter()
            .map(|v| {
                Ok(Target {
                    scorer: open_scorer(&spec, config, layout, v)?,
                    variant: Some(v.clone()),
                })
            })
            .collect(),
        ScorerSpec::Remote(_) => Ok(vec![Target {
            scorer: open_scorer(&spec, config, layout, "")?,
            variant: None,
        }]),
    }
}

/// Patients whose names the model saw: everyone with a label in the
/// template-only variant, otherwise those named in their own notes.
fn target_patients(data: &Dataset, variant: Option<&str>, cap: Option<usize>) -> Vec<PatientId> {
    let mut ids: Vec<PatientId> = data
        .matrix
        .patients()
        .iter()
        .enumerate()
        .filter(|(p, _)| !data.matrix.positives_of(*p).is_empty())
        .map(|(_, id)| id.clone())
        .filter(|id| variant == Some("template_only") || data.patients.get(id).is_some_and(|r| r.reidentified))
        .collect();
    if let Some(n) = cap {
        ids.truncate(n);
    }
    ids
}

fn named_subset(data: &Dataset, ids: &[PatientId]) -> Result<PatientTable> {
    PatientTable::new(ids.iter().filter_map(|id| data.patients.get(id).cloned()))
}

struct Run<'a> {
    config: &'a AuditConfig,
    layout: Layout,
    data: Dataset,
    targets: Vec<Target>,
    label_source: String,
}

/// Missing capabilities skip the model (noted in the report metadata)
/// instead of failing the whole attack.
fn capable(scorer: &ScorerHandle, caps: &[Capability], skipped: &mut Vec<Value>) -> bool {
    match caps.iter().find(|c| !scorer.has(**c)) {
        Some(c) => {
            log::warn!("{} lacks {c:?}; skipped", scorer.model_tag());
            skipped.push(json!({"model_tag": scorer.model_tag(), "missing": format!("{c:?}")}));
            false
        }
        None => true,
    }
}

impl Run<'_> {
    fn report(&self, attack: AttackName, seeds: Value, details: Value, rows: Vec<ReportRow>) -> AttackReport {
        AttackReport {
            attack: attack.as_str().into(),
            meta: json!({
                "config": self.config.to_json(),
                "master_seed": self.config.master_seed(),
                "seeds": seeds,
                "details": details,
            }),
            rows,
        }
    }

    fn seed(&self, name: &str) -> u64 {
        sub_seed(self.config.master_seed(), name)
    }

    fn fib(&self) -> Result<AttackReport> {
        let mut rows = Vec::new();
        let mut details = serde_json::Map::new();
        let mut skipped = Vec::new();
        let options = FibOptions {
            weighting: self.config.attacks.weighting,
            honorifics: self.config.names.honorifics.clone(),
        };
        for t in &self.targets {
            if !capable(&t.scorer, &[Capability::SpanScoring], &mut skipped) {
                continue;
            }
            let tag = t.scorer.model_tag().to_string();
            let ids = target_patients(&self.data, t.variant.as_deref(), self.config.attacks.max_targets);
            let result = run_condition_attack(&t.scorer, &self.data.patients, &ids, &self.data.catalog, &self.data.matrix, &options)?;
            rows.extend(result.rows("fib", &tag, &self.label_source));
            let bins = length_bins(&t.scorer, &self.data.catalog)?;
            let baseline = run_frequency_baseline(&ids, &self.data.matrix, &bins, options.weighting)?;
            rows.extend(baseline.rows("fib", "frequency_baseline", &self.label_source).into_iter().map(|r| ReportRow {
                source: Some(tag.clone()),
                ..r
            }));
            details.insert(
                tag,
                json!({"targets": ids.len(), "skipped_patients": result.skipped_patients, "bins": bins}),
            );
        }
        Ok(self.report(AttackName::Fib, json!({}), json!({"models": details, "skipped": skipped}), rows))
    }

    fn prior(&self) -> Result<AttackReport> {
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        for t in &self.targets {
            if !capable(&t.scorer, &[Capability::SpanScoring], &mut skipped) {
                continue;
            }
            let ids = target_patients(&self.data, t.variant.as_deref(), self.config.attacks.max_targets);
            let r = run_condition_prior_attack(&t.scorer, &ids, &self.data.catalog, &self.data.matrix, self.config.attacks.weighting)?;
            rows.extend(r.rows("prior", t.scorer.model_tag(), &self.label_source));
        }
        Ok(self.report(AttackName::Prior, json!({}), json!({"skipped": skipped}), rows))
    }

    fn probe_config(&self, base: &ProbeConfig, name: &str) -> (ProbeConfig, u64) {
        let seed = self.seed(name);
        (
            ProbeConfig {
                seed,
                ..base.clone()
            },
            seed,
        )
    }

    fn probe(&self) -> Result<AttackReport> {
        let (cfg, seed) = self.probe_config(&self.config.attacks.probe, "probe");
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        for t in &self.targets {
            if !capable(&t.scorer, &[Capability::TextEmbedding], &mut skipped) {
                continue;
            }
            for template in [ProbeTemplate::NameCondition, ProbeTemplate::ConditionOnly] {
                let (r, _) = run_multi_condition_probe(
                    &t.scorer,
                    &self.data.patients,
                    &self.data.catalog,
                    &self.data.matrix,
                    template,
                    &cfg,
                    &self.config.names.honorifics,
                )?;
                rows.push(r.row("probe", t.scorer.model_tag(), &self.label_source));
            }
        }
        Ok(self.report(AttackName::Probe, json!({"probe": seed}), json!({"skipped": skipped}), rows))
    }

    fn per_condition(&self) -> Result<AttackReport> {
        let (cfg, seed) = self.probe_config(&self.config.attacks.probe, "per-condition");
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        for t in &self.targets {
            if !capable(&t.scorer, &[Capability::TextEmbedding], &mut skipped) {
                continue;
            }
            let groups = run_per_condition_probes(
                &t.scorer,
                &self.data.patients,
                &self.data.catalog,
                &self.data.matrix,
                &self.config.attacks.groups,
                &cfg,
                &self.config.names.honorifics,
            )?;
            rows.extend(groups.iter().map(|g| g.row("per-condition", t.scorer.model_tag(), &self.label_source)));
        }
        Ok(self.report(AttackName::PerCondition, json!({"per-condition": seed}), json!({"skipped": skipped}), rows))
    }

    fn name_probe(&self) -> Result<AttackReport> {
        let (cfg, seed) = self.probe_config(&self.config.attacks.name_probe, "name-probe");
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        for t in &self.targets {
            if !capable(&t.scorer, &[Capability::TextEmbedding], &mut skipped) {
                continue;
            }
            match run_name_membership_probe(&t.scorer, &self.data.patients, &cfg) {
                Ok((r, _)) => rows.push(r.row("name-probe", t.scorer.model_tag(), "reidentified")),
                Err(Error::UndefinedMetric(why)) => {
                    log::warn!("name-probe {}: {why}", t.scorer.model_tag());
                    skipped.push(json!({"model_tag": t.scorer.model_tag(), "reason": why}));
                }
                Err(e) => return Err(e),
            }
        }
        Ok(self.report(AttackName::NameProbe, json!({"name-probe": seed}), json!({"skipped": skipped}), rows))
    }

    fn cosine(&self) -> Result<AttackReport> {
        let shuffle_seed = self.seed("cosine-shuffle");
        let shuffled = shuffle_patient_labels(&self.data.matrix, shuffle_seed);
        let ids = target_patients(&self.data, None, None);
        let named = named_subset(&self.data, &ids)?;
        let mut rows = Vec::new();
        let mut audits = Vec::new();
        let mut skipped = Vec::new();
        let mut statics = Vec::new();
        for variant in &self.config.word2vec.variants {
            for &mode in &self.config.word2vec.modes {
                let path = self.layout.w2v(mode, variant);
                let tag = format!("w2v-{}-{variant}", mode_name(mode));
                statics.push((tag, EmbeddingTable::load_text(&path)?));
            }
        }
        let mut sources: Vec<EmbeddingSource<'_>> = statics
            .iter()
            .map(|(tag, table)| EmbeddingSource::Static { tag, table })
            .collect();
        for (tag, table) in &statics {
            audits.push(vocab_audit(tag, table, named.iter(), &self.data.catalog));
        }
        for t in &self.targets {
            if capable(&t.scorer, &[Capability::TokenEmbeddings], &mut skipped) {
                sources.push(EmbeddingSource::Contextual(&t.scorer));
            }
        }
        for source in &sources {
            for &pooling in &self.config.attacks.poolings {
                for (labels, matrix) in [(self.label_source.as_str(), &self.data.matrix), ("shuffled", &shuffled)] {
                    match leakage_score(source, &named, matrix, &self.data.catalog, pooling) {
                        Ok(r) => rows.push(r.row("cosine", labels)),
                        Err(Error::UndefinedMetric(why)) => {
                            log::warn!("cosine {} {}: {why}", source.tag(), pooling.as_str());
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        Ok(self.report(
            AttackName::Cosine,
            json!({"cosine-shuffle": shuffle_seed}),
            json!({"vocab_audit": audits, "skipped": skipped}),
            rows,
        ))
    }

    fn name_part(&self) -> Result<AttackReport> {
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        let all: Vec<&crate::corpus::PatientRecord> = self.data.patients.iter().collect();
        for t in &self.targets {
            if !capable(&t.scorer, &[Capability::SpanScoring], &mut skipped) {
                continue;
            }
            for (kind, label) in [
                (TemplateKind::LastNameMasked, "last_name_masked"),
                (TemplateKind::FirstNameMasked, "first_name_masked"),
            ] {
                match run_name_part_attack(&t.scorer, kind, &all, self.config.attacks.weighting) {
                    Ok(r) => rows.extend(r.rows("name-part", t.scorer.model_tag()).into_iter().map(|row| ReportRow {
                        source: Some(label.into()),
                        ..row
                    })),
                    Err(Error::UndefinedMetric(why)) => log::warn!("name-part {label}: {why}"),
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(self.report(AttackName::NamePart, json!({}), json!({"skipped": skipped}), rows))
    }

    fn generate(&self) -> Result<AttackReport> {
        let comparator_spec = ScorerSpec::parse(&self.config.attacks.comparator)?;
        let comparator = open_scorer(&comparator_spec, self.config, &self.layout, "deidentified")?;
        let gazetteer = NameGazetteer::from_patients(&self.data.patients);
        let exclude_common = !self.config.attacks.include_common_words;
        let mut rows = Vec::new();
        let mut seeds = serde_json::Map::new();
        let mut details = serde_json::Map::new();
        let mut skipped = Vec::new();
        for t in &self.targets {
            if !capable(&t.scorer, &[Capability::ConditionalDistribution], &mut skipped) {
                continue;
            }
            let tag = t.scorer.model_tag().to_string();
            let seed = self.seed(&format!("generate-{tag}"));
            seeds.insert(tag.clone(), json!(seed));
            let cfg = GenConfig {
                seed,
                ..self.config.attacks.generate.clone()
            };
            let samples = run_generation(&t.scorer, &cfg)?;
            let mut mentions = detect_names(&samples, &gazetteer);
            let rerank = t.scorer.has(Capability::SpanScoring) && comparator.has(Capability::SpanScoring);
            if rerank {
                comparator_scores(&samples, &mut mentions, &t.scorer, &comparator)?;
            }
            let ranked = rank_names(&mentions, &gazetteer, exclude_common);
            let eval = evaluate_generation(
                &samples,
                &mentions,
                &ranked,
                &gazetteer,
                &self.data.matrix,
                &self.data.catalog,
                exclude_common,
            );
            write_generation(&self.layout.generate(&tag), &samples, &mentions)?;
            rows.extend(eval.rows("generate", &tag, &self.label_source));
            details.insert(
                tag,
                json!({"comparator": comparator.model_tag(), "reranked": rerank, "counts": eval, "top_names": ranked.iter().take(20).collect::<Vec<_>>()}),
            );
        }
        Ok(self.report(AttackName::Generate, Value::Object(seeds), json!({"models": details, "skipped": skipped}), rows))
    }

    fn run(&self, attack: AttackName) -> Result<AttackReport> {
        log::info!("attack {}", attack.as_str());
        match attack {
            AttackName::Fib => self.fib(),
            AttackName::Prior => self.prior(),
            AttackName::Probe => self.probe(),
            AttackName::PerCondition => self.per_condition(),
            AttackName::NameProbe => self.name_probe(),
            AttackName::Cosine => self.cosine(),
            AttackName::NamePart => self.name_part(),
            AttackName::Generate => self.generate(),
            AttackName::All => unreachable!("expanded by cmd_attack"),
        }
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_generation(dir: &Path, samples: &[Sample], mentions: &[Mention]) -> Result<()> {
    mkdir(dir)?;
    write_jsonl(&dir.join("samples.jsonl"), samples)?;
    write_jsonl(&dir.join("mentions.jsonl"), mentions)
}

/// Runs one attack (or all of them, in a fixed order) and writes each
/// report under `reports/`.
pub fn cmd_attack(config: &AuditConfig, attack: AttackName) -> Result<Vec<AttackReport>> {
    let layout = Layout::new(&config.out);
    let data = load_dataset(&layout)?;
    let run = Run {
        config,
        targets: targets(config, &layout)?,
        layout,
        data,
        label_source: config.data.label_source.clone(),
    };
    mkdir(&run.layout.reports())?;
    let list: Vec<AttackName> = if attack == AttackName::All {
        AttackName::EACH.to_vec()
    } else {
        vec![attack]
    };
    let mut out = Vec::new();
    for a in list {
        let report = run.run(a)?;
        report.write(&run.layout.reports())?;
        out.push(report);
    }
    Ok(out)
}

/// Consolidates `<out>/reports` into `report.csv` and `report.json`.
pub fn cmd_report(config: &AuditConfig) -> Result<AttackReport> {
    consolidate(&Layout::new(&config.out).reports())
}
