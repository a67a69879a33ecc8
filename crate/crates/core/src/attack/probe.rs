//! Supervised probes on frozen text embeddings.
//!
//! Three questions are asked of a scorer's embeddings:
//! - multi-condition: given an encoded "patient with condition" sentence,
//!   does the patient have that condition? Run with and without the name;
//!   if both do equally well the probe is reading condition frequency, not
//!   the patient;
//! - per-condition: one probe per condition over patients, grouped by how
//!   common the condition is;
//! - name membership: does the encoded name alone reveal whether the
//!   patient's name appeared in training?
//!
//! Train and test patients are always disjoint, and class balancing only
//! touches the training rows.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_aligned, split_patients};
use crate::corpus::{ConditionCatalog, ConditionMatrix, Honorifics, PatientId, PatientRecord, PatientTable};
use crate::error::{Error, Result};
use crate::metrics::{accuracy_at_k, auc};
use crate::report::ReportRow;
use crate::scorer::{Capability, ScorerHandle};
use crate::seeds::sub_seed;
use crate::text::{CLS, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeArch {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTemplate {
    NameCondition,
    ConditionOnly,
    NameOnly,
}

impl ProbeTemplate {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeTemplate::NameCondition => "name_condition",
            ProbeTemplate::ConditionOnly => "condition_only",
            ProbeTemplate::NameOnly => "name_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub arch: ProbeArch,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// L2 strength on weights (biases are not penalized).
    pub l2: f64,
    pub test_fraction: f64,
    /// Cap on evaluated test patients.
    pub max_test_patients: Option<usize>,
    /// Shuffle training labels; a null control.
    pub permute_labels: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            arch: ProbeArch::Mlp,
            hidden: 128,
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            l2: 1e-4,
            test_fraction: 0.5,
            max_test_patients: None,
            permute_labels: false,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn logistic(seed: u64) -> Self {
        Self {
            arch: ProbeArch::Logistic,
            l2: 1e-3,
            seed,
            ..Default::default()
        }
    }
}

/// Per-feature standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &[Vec<f64>]) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x {
            var.iter_mut()
                .zip(row.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m));
        }
        let scale = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// A trained probe; [`Probe::score`] is the logit of the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Probe {
    Logistic {
        standardizer: Standardizer,
        weights: Vec<f64>,
        bias: f64,
    },
    Mlp {
        standardizer: Standardizer,
        /// hidden × input, row-major
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    },
}

impl Probe {
    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            Probe::Logistic {
                standardizer,
                weights,
                bias,
            } => {
                let z = standardizer.apply(x);
                bias + z.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>()
            }
            Probe::Mlp {
                standardizer,
                w1,
                b1,
                w2,
                b2,
            } => {
                let z = standardizer.apply(x);
                let d = z.len();
                let mut out = *b2;
                for (j, (bj, w2j)) in b1.iter().zip(w2).enumerate() {
                    let row = &w1[j * d..(j + 1) * d];
                    let h = bj + row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
                    out += w2j * h.max(0.0);
                }
                out
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn train_probe(x: &[Vec<f64>], y: &[bool], config: &ProbeConfig) -> Result<Probe> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidInput("probe features and labels differ in length".into()));
    }
    if !y.iter().any(|&l| l) || y.iter().all(|&l| l) {
        return Err(Error::UndefinedMetric("probe training needs both classes"));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("probe features must be finite and of one dimension".into()));
    }
    let standardizer = Standardizer::fit(x);
    let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
    match config.arch {
        ProbeArch::Logistic => {
            let (weights, bias) = fit_logistic(&z, y, config.l2)?;
            Ok(Probe::Logistic {
                standardizer,
                weights,
                bias,
            })
        }
        ProbeArch::Mlp => {
            let (w1, b1, w2, b2) = fit_mlp(&z, y, config);
            Ok(Probe::Mlp {
                standardizer,
                w1,
                b1,
                w2,
                b2,
            })
        }
    }
}

/// Newton's method on mean log-loss + `l2/2 · |w|²`. The mean makes the
/// solution invariant to duplicating the data set.
fn fit_logistic(z: &[Vec<f64>], y: &[bool], l2: f64) -> Result<(Vec<f64>, f64)> {
    let n = z.len();
    let d = z[0].len();
    let x = DMatrix::from_fn(n, d + 1, |i, j| if j == d { 1.0 } else { z[i][j] });
    let t = DVector::from_fn(n, |i, _| if y[i] { 1.0 } else { 0.0 });
    let mut w = DVector::zeros(d + 1);
    let mut penalty = DVector::from_element(d + 1, l2);
    penalty[d] = 1e-10;
    for _ in 0..100 {
        let p = (&x * &w).map(sigmoid);
        let grad = x.transpose() * (&p - &t) / n as f64 + penalty.component_mul(&w);
        let s = p.map(|v| (v * (1.0 - v)).max(1e-12) / n as f64);
        let mut hess = x.transpose() * DMatrix::from_diagonal(&s) * &x;
        for j in 0..=d {
            hess[(j, j)] += penalty[j];
        }
        let step = hess
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or_else(|| Error::InvalidInput("logistic probe Hessian is singular".into()))?;
        w -= &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    let bias = w[d];
    Ok((w.rows(0, d).iter().copied().collect(), bias))
}

type MlpWeights = (Vec<f64>, Vec<f64>, Vec<f64>, f64);

/// One ReLU hidden layer, sigmoid output, mini-batch Adam with a constant
/// step size, fixed epoch budget.
fn fit_mlp(z: &[Vec<f64>], y: &[bool], config: &ProbeConfig) -> MlpWeights {
    let n = z.len();
    let d = z[0].len();
    let h = config.hidden.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let he1 = Normal::new(0.0, (2.0 / d as f64).sqrt()).expect("valid std");
    let he2 = Normal::new(0.0, (1.0 / h as f64).sqrt()).expect("valid std");
    let mut w1 = DMatrix::from_fn(h, d, |_, _| he1.sample(&mut rng));
    let mut b1 = DVector::<f64>::zeros(h);
    let mut w2 = DVector::from_fn(h, |_, _| he2.sample(&mut rng));
    let mut b2 = 0.0f64;

    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m_w1 = DMatrix::zeros(h, d);
    let mut v_w1 = DMatrix::zeros(h, d);
    let mut m_b1 = DVector::zeros(h);
    let mut v_b1 = DVector::zeros(h);
    let mut m_w2 = DVector::zeros(h);
    let mut v_w2 = DVector::zeros(h);
    let (mut m_b2, mut v_b2) = (0.0, 0.0);
    let mut step = 0i32;

    let mut order: Vec<usize> = (0..n).collect();
    let bs = config.batch_size.max(1);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(bs) {
            let m = batch.len();
            let xb = DMatrix::from_fn(m, d, |i, j| z[batch[i]][j]);
            let tb = DVector::from_fn(m, |i, _| if y[batch[i]] { 1.0 } else { 0.0 });
            let mut pre = &xb * w1.transpose();
            for mut row in pre.row_iter_mut() {
                row += b1.transpose();
            }
            let act = pre.map(|v| v.max(0.0));
            let out = (&act * &w2).add_scalar(b2).map(sigmoid);
            // d(mean BCE)/d(logit)
            let delta = (&out - &tb) / m as f64;
            let g_w2 = act.transpose() * &delta + &w2 * config.l2;
            let g_b2 = delta.sum();
            let mut back = &delta * w2.transpose();
            back.zip_apply(&pre, |g, p| {
                if p <= 0.0 {
                    *g = 0.0
                }
            });
            let g_w1 = back.transpose() * &xb + &w1 * config.l2;
            let g_b1 = back.row_sum().transpose();

            step += 1;
            let c1 = 1.0 - beta1.powi(step);
            let c2 = 1.0 - beta2.powi(step);
            let lr = config.learning_rate;
            let adam = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            for i in 0..w1.len() {
                adam(&mut w1[i], g_w1[i], &mut m_w1[i], &mut v_w1[i]);
            }
            for i in 0..h {
                adam(&mut b1[i], g_b1[i], &mut m_b1[i], &mut v_b1[i]);
                adam(&mut w2[i], g_w2[i], &mut m_w2[i], &mut v_w2[i]);
            }
            adam(&mut b2, g_b2, &mut m_b2, &mut v_b2);
        }
    }
    // store w1 row-major (hidden × input)
    let w1_rows: Vec<f64> = (0..h).flat_map(|j| (0..d).map(move |k| (j, k))).map(|(j, k)| w1[(j, k)]).collect();
    (w1_rows, b1.iter().copied().collect(), w2.iter().copied().collect(), b2)
}

pub fn probe_text(
    template: ProbeTemplate,
    patient: Option<&PatientRecord>,
    condition: Option<&str>,
    honorifics: &Honorifics,
) -> Result<String> {
    let name = || patient.ok_or_else(|| Error::InvalidInput("probe template needs a patient".into()));
    let cond = || condition.ok_or_else(|| Error::InvalidInput("probe template needs a condition".into()));
    Ok(match template {
        ProbeTemplate::NameCondition => {
            let p = name()?;
            format!(
                "{CLS} {} {} {} is a patient with {} {SEP}",
                honorifics.for_gender(p.gender),
                p.first_name,
                p.last_name,
                cond()?
            )
        }
        ProbeTemplate::ConditionOnly => format!("{CLS} {} {SEP}", cond()?),
        ProbeTemplate::NameOnly => {
            let p = name()?;
            format!("{CLS} {} {} {SEP}", p.first_name, p.last_name)
        }
    })
}

/// Embeds distinct texts once, in parallel, keyed by text.
fn embed_all(scorer: &ScorerHandle, texts: impl IntoIterator<Item = String>) -> Result<BTreeMap<String, Vec<f64>>> {
    let unique: BTreeSet<String> = texts.into_iter().collect();
    let unique: Vec<String> = unique.into_iter().collect();
    let vectors: Vec<Vec<f64>> = unique
        .par_iter()
        .map(|t| scorer.embed_text(t))
        .collect::<Result<_>>()?;
    Ok(unique.into_iter().zip(vectors).collect())
}

/// Keeps every positive and an equal-sized random subset of negatives.
pub fn downsample_negatives(labels: &[bool], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let mut keep = pos.clone();
    if neg.len() > pos.len() {
        keep.extend(neg.iter().copied().choose_multiple(rng, pos.len()));
    } else {
        keep.extend(neg);
    }
    keep.sort_unstable();
    keep
}

/// All rows plus positives drawn with replacement until the classes match.
pub fn upsample_positives(labels: &[bool], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg = labels.len() - pos.len();
    let mut keep: Vec<usize> = (0..labels.len()).collect();
    if !pos.is_empty() {
        for _ in pos.len()..neg {
            keep.push(*pos.choose(rng).expect("non-empty"));
        }
    }
    keep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub template: ProbeTemplate,
    pub auc: Option<f64>,
    pub a_at_10: Option<f64>,
    pub train_rows: usize,
    pub train_patients: usize,
    pub test_patients: usize,
    /// Test patients with a single class (no AUC).
    pub skipped_patients: usize,
}

impl ProbeResult {
    pub fn row(&self, attack: &str, model_tag: &str, label_source: &str) -> ReportRow {
        ReportRow {
            auc: self.auc,
            a_at_10: self.a_at_10,
            source: Some(self.template.as_str().into()),
            count: Some(self.test_patients - self.skipped_patients),
            ..ReportRow::new(attack, model_tag, label_source, "all")
        }
    }
}

/// Rows of a multi-condition dataset before balancing.
#[derive(Debug, Clone)]
pub struct ProbeDataset {
    pub patients: Vec<PatientId>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<bool>,
    /// (patient index into `patients`, condition index) per row
    pub cells: Vec<(usize, usize)>,
}

pub fn build_probe_dataset(
    scorer: &ScorerHandle,
    patients: &PatientTable,
    catalog: &ConditionCatalog,
    matrix: &ConditionMatrix,
    template: ProbeTemplate,
    ids: &[PatientId],
    honorifics: &Honorifics,
) -> Result<ProbeDataset> {
    scorer.require(Capability::TextEmbedding)?;
    let mut texts = Vec::new();
    let mut cells = Vec::new();
    let mut y = Vec::new();
    for (pi, pid) in ids.iter().enumerate() {
        let rec = patients.get(pid).ok_or_else(|| Error::UnknownPatient(pid.0.clone()))?;
        if template == ProbeTemplate::NameOnly {
            texts.push(probe_text(template, Some(rec), None, honorifics)?);
            cells.push((pi, 0));
            y.push(rec.reidentified);
            continue;
        }
        let row = matrix
            .patient_index(pid)
            .ok_or_else(|| Error::UnknownPatient(pid.0.clone()))?;
        for (c, cond) in catalog.iter().enumerate() {
            texts.push(probe_text(template, Some(rec), Some(&cond.description), honorifics)?);
            cells.push((pi, c));
            y.push(matrix.get(row, c));
        }
    }
    let table = embed_all(scorer, texts.iter().cloned())?;
    Ok(ProbeDataset {
        patients: ids.to_vec(),
        x: texts.iter().map(|t| table[t].clone()).collect(),
        y,
        cells,
    })
}

fn eligible_patients(patients: &PatientTable, matrix: &ConditionMatrix) -> Vec<PatientId> {
    matrix
        .patients()
        .iter()
        .filter(|p| patients.contains(p))
        .cloned()
        .collect()
}

fn cap_test(mut test: Vec<PatientId>, cap: Option<usize>) -> Vec<PatientId> {
    if let Some(n) = cap {
        test.truncate(n);
    }
    test
}

pub fn run_multi_condition_probe(
    scorer: &ScorerHandle,
    patients: &PatientTable,
    catalog: &ConditionCatalog,
    matrix: &ConditionMatrix,
    template: ProbeTemplate,
    config: &ProbeConfig,
    honorifics: &Honorifics,
) -> Result<(ProbeResult, Probe)> {
    check_aligned(matrix, catalog)?;
    if template == ProbeTemplate::NameOnly {
        return Err(Error::InvalidInput("multi-condition probes need a condition template".into()));
    }
    let ids = eligible_patients(patients, matrix);
    let (train, test) = split_patients(&ids, config.test_fraction, sub_seed(config.seed, "split"));
    let test = cap_test(test, config.max_test_patients);
    assert!(train.iter().all(|p| !test.contains(p)), "train and test patients overlap");

    let train_set = build_probe_dataset(scorer, patients, catalog, matrix, template, &train, honorifics)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "balance"));
    let mut labels = train_set.y.clone();
    if config.permute_labels {
        labels.shuffle(&mut rng);
    }
    let keep = downsample_negatives(&labels, &mut rng);
    let x: Vec<Vec<f64>> = keep.iter().map(|&i| train_set.x[i].clone()).collect();
    let y: Vec<bool> = keep.iter().map(|&i| labels[i]).collect();
    let probe = train_probe(&x, &y, config)?;

    let test_set = build_probe_dataset(scorer, patients, catalog, matrix, template, &test, honorifics)?;
    let n_cond = catalog.len();
    let (mut aucs, mut accs, mut skipped) = (Vec::new(), Vec::new(), 0);
    for (pi, _) in test.iter().enumerate() {
        let rows: Vec<usize> = (0..test_set.cells.len()).filter(|&r| test_set.cells[r].0 == pi).collect();
        let scores: Vec<f64> = rows.iter().map(|&r| probe.score(&test_set.x[r])).collect();
        let labels: Vec<bool> = rows.iter().map(|&r| test_set.y[r]).collect();
        match auc(&scores, &labels) {
            Ok(a) => {
                aucs.push(a);
                accs.push(accuracy_at_k(&scores, &labels, n_cond.min(10))?);
            }
            Err(_) => skipped += 1,
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok((
        ProbeResult {
            template,
            auc: mean(&aucs),
            a_at_10: mean(&accs),
            train_rows: y.len(),
            train_patients: train.len(),
            test_patients: test.len(),
            skipped_patients: skipped,
        },
        probe,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrequencyGroups {
    /// Half-open `(lo, hi]` patient-count ranges.
    pub edges: Vec<(usize, usize)>,
    pub per_group: usize,
}

impl Default for FrequencyGroups {
    fn default() -> Self {
        Self {
            edges: vec![(1, 5), (5, 10), (10, 20), (20, 10_000)],
            per_group: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub lo: usize,
    pub hi: usize,
    pub auc: Option<f64>,
    pub a_at_10: Option<f64>,
    pub probes: usize,
    /// Sampled conditions whose train or test split held one class.
    pub skipped: usize,
}

impl GroupResult {
    pub fn label(&self) -> String {
        format!("({},{}]", self.lo, self.hi)
    }

    pub fn row(&self, attack: &str, model_tag: &str, label_source: &str) -> ReportRow {
        ReportRow {
            auc: self.auc,
            a_at_10: self.a_at_10,
            source: Some(ProbeTemplate::NameCondition.as_str().into()),
            count: Some(self.probes),
            ..ReportRow::new(attack, model_tag, label_source, self.label())
        }
    }
}

/// Conditions sampled into each frequency group; a condition lands in at
/// most one group.
pub fn sample_groups(matrix: &ConditionMatrix, groups: &FrequencyGroups, seed: u64) -> Vec<Vec<usize>> {
    let counts = matrix.counts();
    groups
        .edges
        .iter()
        .enumerate()
        .map(|(g, &(lo, hi))| {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &format!("group-{g}")));
            let candidates: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > lo && counts[c] <= hi).collect();
            let mut chosen = candidates.into_iter().choose_multiple(&mut rng, groups.per_group);
            chosen.sort_unstable();
            chosen
        })
        .collect()
}

pub fn run_per_condition_probes(
    scorer: &ScorerHandle,
    patients: &PatientTable,
    catalog: &ConditionCatalog,
    matrix: &ConditionMatrix,
    groups: &FrequencyGroups,
    config: &ProbeConfig,
    honorifics: &Honorifics,
) -> Result<Vec<GroupResult>> {
    check_aligned(matrix, catalog)?;
    scorer.require(Capability::TextEmbedding)?;
    let ids = eligible_patients(patients, matrix);
    let (train, test) = split_patients(&ids, config.test_fraction, sub_seed(config.seed, "split"));
    let test = cap_test(test, config.max_test_patients);
    let sampled = sample_groups(matrix, groups, config.seed);

    let mut out = Vec::new();
    for (&(lo, hi), conditions) in groups.edges.iter().zip(&sampled) {
        let results: Vec<Option<(f64, f64)>> = conditions
            .par_iter()
            .map(|&c| {
                let desc = &catalog.get(c).description;
                let embed = |ids: &[PatientId]| -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
                    let mut x = Vec::with_capacity(ids.len());
                    let mut y = Vec::with_capacity(ids.len());
                    for pid in ids {
                        let rec = patients.get(pid).ok_or_else(|| Error::UnknownPatient(pid.0.clone()))?;
                        let text = probe_text(ProbeTemplate::NameCondition, Some(rec), Some(desc), honorifics)?;
                        x.push(scorer.embed_text(&text)?);
                        let row = matrix.patient_index(pid).expect("eligible patients are in the matrix");
                        y.push(matrix.get(row, c));
                    }
                    Ok((x, y))
                };
                let (tx, ty) = embed(&train)?;
                let (ex, ey) = embed(&test)?;
                let both = |y: &[bool]| y.iter().any(|&v| v) && !y.iter().all(|&v| v);
                if !both(&ty) || !both(&ey) {
                    return Ok(None);
                }
                let cfg = ProbeConfig {
                    seed: sub_seed(config.seed, &matrix.conditions()[c].0),
                    ..config.clone()
                };
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "balance"));
                let mut ty = ty;
                if config.permute_labels {
                    ty.shuffle(&mut rng);
                }
                let keep = upsample_positives(&ty, &mut rng);
                let x: Vec<Vec<f64>> = keep.iter().map(|&i| tx[i].clone()).collect();
                let y: Vec<bool> = keep.iter().map(|&i| ty[i]).collect();
                let probe = train_probe(&x, &y, &cfg)?;
                let scores: Vec<f64> = ex.iter().map(|v| probe.score(v)).collect();
                let a = auc(&scores, &ey)?;
                let k = accuracy_at_k(&scores, &ey, ey.len().min(10))?;
                Ok(Some((a, k)))
            })
            .collect::<Result<_>>()?;
        let done: Vec<(f64, f64)> = results.iter().flatten().copied().collect();
        let n = done.len();
        out.push(GroupResult {
            lo,
            hi,
            auc: (n > 0).then(|| done.iter().map(|r| r.0).sum::<f64>() / n as f64),
            a_at_10: (n > 0).then(|| done.iter().map(|r| r.1).sum::<f64>() / n as f64),
            probes: n,
            skipped: conditions.len() - n,
        });
    }
    Ok(out)
}

/// Logistic probe on name-only encodings predicting the reidentified flag,
/// on a seeded 50/50 patient split.
pub fn run_name_membership_probe(
    scorer: &ScorerHandle,
    patients: &PatientTable,
    config: &ProbeConfig,
) -> Result<(ProbeResult, Probe)> {
    let ids: Vec<PatientId> = patients.ids().cloned().collect();
    let (train, test) = split_patients(&ids, config.test_fraction, sub_seed(config.seed, "split"));
    let test = cap_test(test, config.max_test_patients);
    let empty = ConditionMatrix::with_ids(Vec::new(), Vec::new());
    let empty_catalog = ConditionCatalog::new(Vec::new())?;
    let h = Honorifics::default();
    let tr = build_probe_dataset(scorer, patients, &empty_catalog, &empty, ProbeTemplate::NameOnly, &train, &h)?;
    let te = build_probe_dataset(scorer, patients, &empty_catalog, &empty, ProbeTemplate::NameOnly, &test, &h)?;
    let mut y = tr.y.clone();
    if config.permute_labels {
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(config.seed, "permute")));
    }
    let probe = train_probe(&tr.x, &y, config)?;
    let scores: Vec<f64> = te.x.iter().map(|v| probe.score(v)).collect();
    let a = auc(&scores, &te.y).ok();
    Ok((
        ProbeResult {
            template: ProbeTemplate::NameOnly,
            auc: a,
            a_at_10: None,
            train_rows: y.len(),
            train_patients: train.len(),
            test_patients: test.len(),
            skipped_patients: usize::from(a.is_none()) * test.len(),
        },
        probe,
    ))
}

/// Random unit-free features for quick probe checks.
pub fn gaussian_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>() - 0.5).collect()).collect()
}
