//! Extraction by generation: Gibbs sampling from a masked LM, gazetteer
//! name detection, and re-ranking detected names by how much more likely
//! the audited model finds them than a comparator model does.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConditionCatalog, ConditionMatrix, PatientId, PatientTable};
use crate::error::{Error, Result};
use crate::lexicon::is_common_word;
use crate::report::ReportRow;
use crate::scorer::{Capability, ScorerHandle, TokenDistribution};
use crate::seeds::sub_seed;
use crate::text::{detokenize, is_special, tokenize, CLS, MASK, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GibbsInit {
    AllMask,
    RandomTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Positions between `[CLS]` and `[SEP]`.
    pub sample_length: usize,
    pub num_samples: usize,
    pub sweeps: usize,
    pub init: GibbsInit,
    /// 0 picks the most likely token.
    pub temperature: f64,
    /// Visit positions in a fresh random order each sweep instead of left
    /// to right.
    pub random_order: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            sample_length: 100,
            num_samples: 10_000,
            sweeps: 5,
            init: GibbsInit::AllMask,
            temperature: 1.0,
            random_order: false,
            seed: 0,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        if self.sample_length == 0 || self.sweeps == 0 {
            return Err(Error::Config("sample_length and sweeps must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub chain_id: usize,
    pub seed: u64,
    pub tokens: Vec<String>,
}

impl Sample {
    /// The sample as words of the audit tokenizer.
    pub fn words(&self) -> Vec<String> {
        tokenize(&detokenize(&self.tokens))
    }

    pub fn text(&self) -> String {
        detokenize(&self.tokens)
    }
}

fn draw(dist: &TokenDistribution, temperature: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    let allowed: Vec<usize> = (0..dist.probs.len())
        .filter(|&i| dist.probs[i] > 0.0 && !is_special(&dist.tokens[i]))
        .collect();
    if allowed.is_empty() {
        return Err(Error::Protocol("conditional puts no mass on ordinary tokens".into()));
    }
    if temperature == 0.0 {
        let mut best = allowed[0];
        for &i in &allowed[1..] {
            if dist.probs[i] > dist.probs[best] {
                best = i;
            }
        }
        return Ok(best);
    }
    let logs: Vec<f64> = allowed.iter().map(|&i| dist.probs[i].ln() / temperature).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if r < *w {
            return Ok(allowed[k]);
        }
        r -= w;
    }
    Ok(*allowed.last().expect("non-empty"))
}

/// One chain: `sweeps` passes over the positions, each position masked and
/// resampled from the scorer's conditional. Returns the tokens between
/// `[CLS]` and `[SEP]`.
pub fn gibbs_sample(scorer: &ScorerHandle, config: &GenConfig, chain_seed: u64) -> Result<Vec<String>> {
    config.validate()?;
    scorer.require(Capability::ConditionalDistribution)?;
    let n = config.sample_length;
    let mut rng = ChaCha8Rng::seed_from_u64(chain_seed);
    let mut seq: Vec<String> = std::iter::once(CLS.to_string())
        .chain(std::iter::repeat_n(MASK.to_string(), n))
        .chain(std::iter::once(SEP.to_string()))
        .collect();
    if config.init == GibbsInit::RandomTokens {
        let dist = scorer.conditional(&seq, 1)?;
        let ordinary: Vec<usize> = (0..dist.tokens.len()).filter(|&i| !is_special(&dist.tokens[i])).collect();
        if ordinary.is_empty() {
            return Err(Error::Protocol("scorer vocabulary has no ordinary tokens".into()));
        }
        for pos in 1..=n {
            seq[pos] = dist.tokens[ordinary[rng.random_range(0..ordinary.len())]].clone();
        }
    }
    let mut order: Vec<usize> = (1..=n).collect();
    for _ in 0..config.sweeps {
        if config.random_order {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
        }
        for &pos in &order {
            let dist = scorer.conditional(&seq, pos)?;
            let pick = draw(&dist, config.temperature, &mut rng)?;
            seq[pos] = dist.tokens[pick].clone();
        }
    }
    Ok(seq[1..=n].to_vec())
}

/// Independent chains, chain `i` seeded with `sub_seed(seed, "chain-i")`.
pub fn run_generation(scorer: &ScorerHandle, config: &GenConfig) -> Result<Vec<Sample>> {
    (0..config.num_samples)
        .into_par_iter()
        .map(|i| {
            let seed = sub_seed(config.seed, &format!("chain-{i}"));
            Ok(Sample {
                chain_id: i,
                seed,
                tokens: gibbs_sample(scorer, config, seed)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameKind {
    First,
    Last,
    Full,
}

/// Exact, case-insensitive lookup of every known patient name.
#[derive(Debug, Clone, Default)]
pub struct NameGazetteer {
    names: BTreeMap<(NameKind, Vec<String>), BTreeSet<PatientId>>,
    lengths: BTreeSet<usize>,
    reidentified: BTreeSet<PatientId>,
}

impl NameGazetteer {
    pub fn from_patients(patients: &PatientTable) -> Self {
        let mut g = Self::default();
        for p in patients.iter() {
            let first = tokenize(&p.first_name);
            let last = tokenize(&p.last_name);
            let full: Vec<String> = first.iter().chain(&last).cloned().collect();
            for (kind, toks) in [(NameKind::First, first), (NameKind::Last, last), (NameKind::Full, full)] {
                if toks.is_empty() {
                    continue;
                }
                g.lengths.insert(toks.len());
                g.names.entry((kind, toks)).or_default().insert(p.patient_id.clone());
            }
            if p.reidentified {
                g.reidentified.insert(p.patient_id.clone());
            }
        }
        g
    }

    pub fn owners(&self, kind: NameKind, name: &str) -> Option<&BTreeSet<PatientId>> {
        self.names.get(&(kind, tokenize(name)))
    }

    /// Some owner of this name had their name in training.
    pub fn owned_by_reidentified(&self, kind: NameKind, name: &str) -> bool {
        self.owners(kind, name)
            .is_some_and(|o| o.iter().any(|p| self.reidentified.contains(p)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub sample_id: usize,
    /// Word positions `[start, end)` in [`Sample::words`].
    pub span: (usize, usize),
    pub name: String,
    pub kind: NameKind,
    pub patient_ids: Vec<PatientId>,
    pub common_word: bool,
    /// Comparator NLL minus target NLL, when scored.
    pub score: Option<f64>,
}

pub fn detect_names(samples: &[Sample], gazetteer: &NameGazetteer) -> Vec<Mention> {
    let mut out = Vec::new();
    for (sid, sample) in samples.iter().enumerate() {
        let words = sample.words();
        for start in 0..words.len() {
            for &len in &gazetteer.lengths {
                if start + len > words.len() {
                    break;
                }
                let window = &words[start..start + len];
                for kind in [NameKind::First, NameKind::Last, NameKind::Full] {
                    let Some(owners) = gazetteer.names.get(&(kind, window.to_vec())) else { continue };
                    let name = window.join(" ");
                    out.push(Mention {
                        sample_id: sid,
                        span: (start, start + len),
                        common_word: kind != NameKind::Full && is_common_word(&name),
                        name,
                        kind,
                        patient_ids: owners.iter().cloned().collect(),
                        score: None,
                    });
                }
            }
        }
    }
    out
}

/// Scores each first/last-name mention by `comparator NLL − target NLL` of
/// the masked name in its sample. Mentions touching either end of the
/// sample are left unscored.
pub fn comparator_scores(
    samples: &[Sample],
    mentions: &mut [Mention],
    target: &ScorerHandle,
    comparator: &ScorerHandle,
) -> Result<()> {
    let words: Vec<Vec<String>> = samples.iter().map(Sample::words).collect();
    let scores: Vec<Option<f64>> = mentions
        .par_iter()
        .map(|m| {
            let w = &words[m.sample_id];
            let (start, end) = m.span;
            if m.kind == NameKind::Full || start == 0 || end >= w.len() {
                return Ok(None);
            }
            let prefix = format!("{CLS} {}", w[..start].join(" "));
            let suffix = format!("{} {SEP}", w[end..].join(" "));
            let t = target.score_raw(&prefix, &suffix, &m.name)?.mean_nll();
            let c = comparator.score_raw(&prefix, &suffix, &m.name)?.mean_nll();
            Ok(Some(c - t))
        })
        .collect::<Result<_>>()?;
    for (m, s) in mentions.iter_mut().zip(scores) {
        m.score = s;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedName {
    pub name: String,
    pub kind: NameKind,
    pub score: f64,
    pub reidentified_owner: bool,
}

/// Distinct scored names, best occurrence first; ties by name.
pub fn rank_names(mentions: &[Mention], gazetteer: &NameGazetteer, exclude_common: bool) -> Vec<RankedName> {
    let mut best: BTreeMap<(String, NameKind), f64> = BTreeMap::new();
    for m in mentions {
        let Some(s) = m.score else { continue };
        if exclude_common && m.common_word {
            continue;
        }
        let e = best.entry((m.name.clone(), m.kind)).or_insert(s);
        *e = e.max(s);
    }
    let mut ranked: Vec<RankedName> = best
        .into_iter()
        .map(|((name, kind), score)| RankedName {
            reidentified_owner: gazetteer.owned_by_reidentified(kind, &name),
            name,
            kind,
            score,
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub samples: usize,
    pub samples_with_name: usize,
    /// Percent of samples containing a name.
    pub pct_samples_with_name: f64,
    pub unique_names: usize,
    pub unique_names_reidentified: usize,
    /// Percent of distinct generated first/last names owned by a patient
    /// whose name was in training.
    pub pct_unique_names_reidentified: f64,
    pub ranked_names: usize,
    /// Fraction of the top `min(100, n)` ranked names owned by such a
    /// patient.
    pub a_at_100: f64,
    pub samples_with_patient: usize,
    pub samples_with_patient_condition: usize,
    /// Percent of samples naming a patient in full that also contain one
    /// of that patient's conditions; `None` when no sample names one.
    pub pct_name_with_positive_condition: Option<f64>,
}

impl GenReport {
    pub fn rows(&self, attack: &str, model_tag: &str, label_source: &str) -> Vec<ReportRow> {
        let row = |bin: &str, v: Option<f64>, n: usize| ReportRow {
            value_mean: v,
            count: Some(n),
            ..ReportRow::new(attack, model_tag, label_source, bin)
        };
        vec![
            row("pct_samples_with_name", Some(self.pct_samples_with_name), self.samples),
            row("pct_unique_names_reidentified", Some(self.pct_unique_names_reidentified), self.unique_names),
            row("a_at_100", Some(self.a_at_100), self.ranked_names.min(100)),
            row(
                "pct_name_with_positive_condition",
                self.pct_name_with_positive_condition,
                self.samples_with_patient,
            ),
        ]
    }
}

fn pct(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        100.0 * a as f64 / b as f64
    }
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_generation(
    samples: &[Sample],
    mentions: &[Mention],
    ranked: &[RankedName],
    gazetteer: &NameGazetteer,
    matrix: &ConditionMatrix,
    catalog: &ConditionCatalog,
    exclude_common: bool,
) -> GenReport {
    let kept: Vec<&Mention> = mentions.iter().filter(|m| !(exclude_common && m.common_word)).collect();
    let with_name: BTreeSet<usize> = kept.iter().map(|m| m.sample_id).collect();
    let unique: BTreeSet<(NameKind, &str)> = kept
        .iter()
        .filter(|m| m.kind != NameKind::Full)
        .map(|m| (m.kind, m.name.as_str()))
        .collect();
    let unique_reid = unique
        .iter()
        .filter(|(k, n)| gazetteer.owned_by_reidentified(*k, n))
        .count();
    let top = ranked.len().min(100);
    let a_at_100 = if top == 0 {
        0.0
    } else {
        ranked[..top].iter().filter(|r| r.reidentified_owner).count() as f64 / top as f64
    };

    let mut by_sample: BTreeMap<usize, BTreeSet<&PatientId>> = BTreeMap::new();
    for m in kept.iter().filter(|m| m.kind == NameKind::Full) {
        by_sample.entry(m.sample_id).or_default().extend(m.patient_ids.iter());
    }
    let mut with_condition = 0;
    for (&sid, pids) in &by_sample {
        let text = samples[sid].text().to_lowercase();
        let hit = pids.iter().any(|pid| {
            matrix.patient_index(pid).is_some_and(|row| {
                matrix.positives_of(row).iter().any(|&c| {
                    let d = catalog.get(c).description.to_lowercase();
                    !d.is_empty() && text.contains(&d)
                })
            })
        });
        with_condition += usize::from(hit);
    }
    GenReport {
        samples: samples.len(),
        samples_with_name: with_name.len(),
        pct_samples_with_name: pct(with_name.len(), samples.len()),
        unique_names: unique.len(),
        unique_names_reidentified: unique_reid,
        pct_unique_names_reidentified: pct(unique_reid, unique.len()),
        ranked_names: ranked.len(),
        a_at_100,
        samples_with_patient: by_sample.len(),
        samples_with_patient_condition: with_condition,
        pct_name_with_positive_condition: (!by_sample.is_empty()).then(|| pct(with_condition, by_sample.len())),
    }
}
