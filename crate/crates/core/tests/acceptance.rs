//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Everything runs on the toy scorer and small reference scorers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::{Duration, Instant};

use leakaudit::attack::cosine::{leakage_score, EmbeddingSource};
use leakaudit::attack::fib::{length_bins, prior_scores, run_condition_attack, run_frequency_baseline, FibOptions};
use leakaudit::attack::gen::{
    comparator_scores, detect_names, gibbs_sample, rank_names, run_generation, GenConfig, GibbsInit, NameGazetteer,
    Sample,
};
use leakaudit::attack::probe::{run_multi_condition_probe, ProbeConfig, ProbeTemplate};
use leakaudit::attack::shuffle_patient_labels;
use leakaudit::config::AuditConfig;
use leakaudit::corpus::synth::{fixture, Fixture, FixtureSpec, FrequencyShape};
use leakaudit::corpus::{build_template_only, ConditionMatrix, Honorifics, NamePool, PatientId, PatientRecord, PatientTable};
use leakaudit::metrics::{accuracy_at_k, auc, spearman, BinWeighting};
use leakaudit::pipeline::{cmd_attack, cmd_report, cmd_synth, cmd_train, AttackName, Layout, TrainTarget};
use leakaudit::scorer::reference::{ClosureScorer, UniformScorer};
use leakaudit::scorer::{ScorerHandle, ToyConfig, ToyScorer};
use leakaudit::static_embed::{train_word2vec, Pooling, W2vConfig, W2vMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<(bool, String), String>;

fn main() {
    let criteria: [(&str, Option<Duration>, fn() -> Outcome); 8] = [
        ("metric-oracles", Some(Duration::from_secs(5)), metric_oracles),
        ("null-calibration", Some(Duration::from_secs(120)), null_calibration),
        ("memorization", Some(Duration::from_secs(120)), memorization),
        ("condition-prior", Some(Duration::from_secs(60)), condition_prior),
        ("probe-controls", None, probe_controls),
        ("cosine", Some(Duration::from_secs(180)), cosine_leakage),
        ("gibbs", None, gibbs),
        ("determinism", None, determinism),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && in_time, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget = limit.map(|l| format!(", limit {}s", l.as_secs())).unwrap_or_default();
        println!(
            "{} {name}: {detail} ({:.2}s{budget})",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn toy_on(lines: &[String], k: usize) -> Result<ScorerHandle, String> {
    let toy = ToyScorer::train(lines.iter().map(String::as_str), ToyConfig { k, ..Default::default() }).map_err(err)?;
    Ok(ScorerHandle::new(toy))
}

fn template_lines(matrix: &ConditionMatrix, patients: &PatientTable, f: &Fixture) -> Result<Vec<String>, String> {
    let corpus = build_template_only(matrix, patients, &f.catalog, &Honorifics::default()).map_err(err)?;
    Ok(corpus.lines().map(String::from).collect())
}

fn fixture_spec(shape: FrequencyShape, conditions: usize, per_patient: usize, multi_piece: bool, seed: u64) -> FixtureSpec {
    FixtureSpec {
        patients: 100,
        conditions,
        conditions_per_patient: per_patient,
        shape,
        multi_piece,
        seed,
    }
}

/// 100 patients, 100 conditions, 10 each, every condition equally common.
fn balanced() -> Fixture {
    fixture(&fixture_spec(FrequencyShape::Balanced, 100, 10, true, 1))
}

fn ids(patients: &PatientTable) -> Vec<PatientId> {
    patients.ids().cloned().collect()
}

// ---- brute-force metric oracles ----

fn brute_auc(s: &[f64], l: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] && !l[j] {
                pairs += 1.0;
                wins += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn brute_a_at_k(s: &[f64], l: &[bool], k: usize) -> f64 {
    let hits = (0..s.len())
        .filter(|&i| {
            let ahead = (0..s.len()).filter(|&j| s[j] > s[i] || (s[j] == s[i] && j < i)).count();
            ahead < k && l[i]
        })
        .count();
    hits as f64 / k as f64
}

fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&xi| {
            let below = x.iter().filter(|&&xj| xj < xi).count() as f64;
            let equal = x.iter().filter(|&&xj| xj == xi).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

fn brute_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (brute_ranks(x), brute_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        // coarse grids force ties; fine grids make them rare
        let grid = if rng.random_bool(0.5) { 5 } else { 1_000_000 };
        let draw = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(0..grid) as f64).collect::<Vec<_>>();
        let s = draw(&mut rng);
        let y = draw(&mut rng);
        let mut l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        l[0] = true;
        l[n - 1] = false;
        let k = rng.random_range(1..=n);

        let a = auc(&s, &l).map_err(err)?;
        worst = worst.max((a - brute_auc(&s, &l)).abs());
        let acc = accuracy_at_k(&s, &l, k).map_err(err)?;
        worst = worst.max((acc - brute_a_at_k(&s, &l, k)).abs());
        match (spearman(&s, &y).ok(), brute_spearman(&s, &y)) {
            (Some(r), Some(b)) => worst = worst.max((r - b).abs()),
            (None, None) => {}
            _ => mismatches += 1,
        }
    }
    Ok((
        worst <= 1e-12 && mismatches == 0,
        format!("200 instances, max abs error {worst:.2e}, definedness mismatches {mismatches}"),
    ))
}

// ---- null calibration ----

fn null_calibration() -> Outcome {
    let f = fixture(&fixture_spec(FrequencyShape::Independent, 40, 8, true, 2));
    // Training text pairs every name with an independently drawn condition
    // set, so the names carry no information about the evaluated labels.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let unrelated = leakaudit::corpus::synth::draw_matrix(&f.patients, &f.catalog, 8, FrequencyShape::Independent, &mut rng);
    let toy = toy_on(&template_lines(&unrelated, &f.patients, &f)?, 8)?;
    let targets = ids(&f.patients);
    let r = run_condition_attack(&toy, &f.patients, &targets, &f.catalog, &f.matrix, &FibOptions::default()).map_err(err)?;
    let macro_auc = r.auc.ok_or("no AUC")?;

    let bins = length_bins(&toy, &f.catalog).map_err(err)?;
    let base = run_frequency_baseline(&targets, &f.matrix, &bins, BinWeighting::Equal).map_err(err)?;
    let counts: Vec<f64> = f.matrix.counts().iter().map(|&c| c as f64).collect();
    let mut exact = base.per_patient.len() == targets.len();
    for pm in &base.per_patient {
        let p = f.matrix.patient_index(&pm.patient_id).ok_or("unknown patient")?;
        let row = f.matrix.row(p);
        let per_bin: Vec<f64> = bins
            .values()
            .filter_map(|idx| {
                let s: Vec<f64> = idx.iter().map(|&c| counts[c]).collect();
                let l: Vec<bool> = idx.iter().map(|&c| row[c]).collect();
                (l.contains(&true) && l.contains(&false)).then(|| brute_auc(&s, &l))
            })
            .collect();
        let oracle = per_bin.iter().sum::<f64>() / per_bin.len() as f64;
        exact &= oracle == pm.auc;
    }
    Ok((
        (0.45..=0.55).contains(&macro_auc) && exact,
        format!(
            "toy macro AUC {macro_auc:.4} (want [0.45, 0.55]); baseline per-patient AUC equals brute force for {} patients: {exact}",
            base.per_patient.len()
        ),
    ))
}

// ---- memorization ----

fn memorization() -> Outcome {
    let f = balanced();
    let toy = toy_on(&template_lines(&f.matrix, &f.patients, &f)?, 8)?;
    let targets = ids(&f.patients);
    let r = run_condition_attack(&toy, &f.patients, &targets, &f.catalog, &f.matrix, &FibOptions::default()).map_err(err)?;
    let bins = length_bins(&toy, &f.catalog).map_err(err)?;
    let base = run_frequency_baseline(&targets, &f.matrix, &bins, BinWeighting::Equal).map_err(err)?;
    let (a, b) = (r.auc.ok_or("no AUC")?, base.auc.ok_or("no baseline AUC")?);
    Ok((
        a >= 0.95 && a > b,
        format!("toy k=8 AUC {a:.4} (want >= 0.95), frequency baseline {b:.4} on uniform frequencies"),
    ))
}

// ---- condition prior ----

fn prior_rho(toy: &ScorerHandle, f: &Fixture, reference: &ConditionMatrix) -> Result<f64, String> {
    let bins = length_bins(toy, &f.catalog).map_err(err)?;
    let prior = prior_scores(toy, &f.catalog, &bins).map_err(err)?;
    let freq: Vec<f64> = reference.counts().iter().map(|&c| c as f64).collect();
    spearman(&prior, &freq).map_err(err)
}

fn condition_prior() -> Outcome {
    let zipf = fixture(&fixture_spec(FrequencyShape::Zipf { exponent: 1.0 }, 100, 10, false, 4));
    let toy = toy_on(&template_lines(&zipf.matrix, &zipf.patients, &zipf)?, 8)?;
    let rho = prior_rho(&toy, &zipf, &zipf.matrix)?;

    // Same patients and catalog, conditions drawn uniformly at random.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let uniform = leakaudit::corpus::synth::draw_matrix(&zipf.patients, &zipf.catalog, 10, FrequencyShape::Independent, &mut rng);
    let flat = toy_on(&template_lines(&uniform, &zipf.patients, &zipf)?, 8)?;
    let rho_flat = prior_rho(&flat, &zipf, &zipf.matrix)?;
    Ok((
        rho >= 0.8 && rho_flat.abs() <= 0.2,
        format!("Zipf corpus rho {rho:.4} (want >= 0.8); uniform corpus rho {rho_flat:.4} (want |rho| <= 0.2)"),
    ))
}

// ---- probe controls ----

fn probe_controls() -> Outcome {
    let f = fixture(&fixture_spec(FrequencyShape::Balanced, 40, 8, true, 6));
    let toy = toy_on(&template_lines(&f.matrix, &f.patients, &f)?, 8)?;
    let h = Honorifics::default();
    let mut in_band = 0;
    let mut aucs = Vec::new();
    for seed in 0..20 {
        let cfg = ProbeConfig {
            permute_labels: true,
            seed,
            ..Default::default()
        };
        let (r, _) =
            run_multi_condition_probe(&toy, &f.patients, &f.catalog, &f.matrix, ProbeTemplate::NameCondition, &cfg, &h)
                .map_err(err)?;
        let a = r.auc.ok_or("no permuted AUC")?;
        in_band += usize::from((0.4..=0.6).contains(&a));
        aucs.push(a);
    }
    let (lo, hi) = aucs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));

    // An embedding that exposes nothing but corpus frequency.
    let z = fixture(&fixture_spec(FrequencyShape::Zipf { exponent: 1.5 }, 50, 5, false, 7));
    let by_text: HashMap<String, f64> =
        z.catalog.iter().zip(z.matrix.counts()).map(|(c, &n)| (c.description.clone(), (1.0 + n as f64).ln())).collect();
    let oracle = ScorerHandle::new(ClosureScorer::new("frequency-oracle").with_embedding(move |text| {
        let inner = text.trim_start_matches("[CLS]").trim_end_matches("[SEP]").trim();
        vec![by_text.get(inner).copied().unwrap_or(0.0), 1.0]
    }));
    let (r, _) = run_multi_condition_probe(
        &oracle,
        &z.patients,
        &z.catalog,
        &z.matrix,
        ProbeTemplate::ConditionOnly,
        &ProbeConfig::default(),
        &h,
    )
    .map_err(err)?;
    let freq_auc = r.auc.ok_or("no oracle AUC")?;
    Ok((
        in_band >= 19 && freq_auc >= 0.9,
        format!(
            "permuted labels: {in_band}/20 seeds in [0.4, 0.6] (range {lo:.3}..{hi:.3}); frequency-oracle condition-only AUC {freq_auc:.4} (want >= 0.9)"
        ),
    ))
}

// ---- cosine ----

fn cosine_leakage() -> Outcome {
    let f = balanced();
    let lines = template_lines(&f.matrix, &f.patients, &f)?;
    let cfg = W2vConfig {
        mode: W2vMode::SkipGram,
        seed: 8,
        ..Default::default()
    };
    let trained = train_word2vec(lines.iter().map(String::as_str), &cfg).map_err(err)?;
    let source = EmbeddingSource::Static {
        tag: "skipgram",
        table: &trained.table,
    };
    let real = leakage_score(&source, &f.patients, &f.matrix, &f.catalog, Pooling::Mean).map_err(err)?;
    let shuffled_labels = shuffle_patient_labels(&f.matrix, 9);
    let shuffled = leakage_score(&source, &f.patients, &shuffled_labels, &f.catalog, Pooling::Mean).map_err(err)?;
    let se2 = 2.0 * real.std / (real.patients as f64).sqrt();
    Ok((
        real.mean > 0.0 && real.mean > se2 && shuffled.mean.abs() < 0.02,
        format!(
            "real mean delta {:.4} vs 2*std/sqrt(n) {se2:.4} (n={}); shuffled mean delta {:.4} (want |.| < 0.02)",
            real.mean, real.patients, shuffled.mean
        ),
    ))
}

// ---- Gibbs ----

fn gibbs() -> Outcome {
    // Degenerate scorer: all mass on one word, absorbed after one sweep.
    let vocab: Vec<String> = ["[CLS]", "[SEP]", "a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let degenerate = ScorerHandle::new(ClosureScorer::new("degenerate").with_conditional(vocab, |_, _| {
        vec![0.0, 0.0, 0.0, 1.0, 0.0]
    }));
    let mut absorbed = true;
    for init in [GibbsInit::AllMask, GibbsInit::RandomTokens] {
        let cfg = GenConfig {
            sample_length: 64,
            sweeps: 1,
            init,
            ..Default::default()
        };
        let out = gibbs_sample(&degenerate, &cfg, 10).map_err(err)?;
        absorbed &= out.len() == 64 && out.iter().all(|t| t == "b");
    }

    // Uniform scorer: the unigram histogram of 1e5 tokens.
    let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let uniform = ScorerHandle::new(UniformScorer::new(words.clone()));
    let cfg = GenConfig {
        sample_length: 100,
        num_samples: 1000,
        sweeps: 1,
        seed: 11,
        ..Default::default()
    };
    let samples = run_generation(&uniform, &cfg).map_err(err)?;
    let mut counts: BTreeMap<&str, f64> = words.iter().map(|w| (w.as_str(), 0.0)).collect();
    let mut total = 0.0;
    for t in samples.iter().flat_map(|s| &s.tokens) {
        *counts.get_mut(t.as_str()).ok_or("token outside vocabulary")? += 1.0;
        total += 1.0;
    }
    let expected = total / words.len() as f64;
    let chi2: f64 = counts.values().map(|o| (o - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((words.len() - 1) as f64).map_err(err)?.cdf(chi2);

    let (rerank_auc, names) = rerank()?;
    Ok((
        absorbed && total == 1e5 && p >= 0.01 && rerank_auc >= 0.7,
        format!(
            "degenerate absorbed in one sweep: {absorbed}; uniform unigram chi2 {chi2:.2} p {p:.4} over {total} tokens (want p >= 0.01); re-ranking AUC {rerank_auc:.4} over {names} names (want >= 0.7)"
        ),
    ))
}

/// Samples from a memorizing target, plus a copy of every sample with each
/// patient name token swapped for an unseen decoy name. Ranks all detected
/// names by comparator NLL minus target NLL.
fn rerank() -> Result<(f64, usize), String> {
    let f = balanced();
    let target = toy_on(&template_lines(&f.matrix, &f.patients, &f)?, 8)?;
    let blank = PatientTable::new(f.patients.iter().map(|p| PatientRecord {
        first_name: String::new(),
        last_name: String::new(),
        ..p.clone()
    }))
    .map_err(err)?;
    let comparator = toy_on(&template_lines(&f.matrix, &blank, &f)?, 8)?;

    let cfg = GenConfig {
        sample_length: 40,
        num_samples: 200,
        sweeps: 3,
        seed: 12,
        ..Default::default()
    };
    let samples = run_generation(&target, &cfg).map_err(err)?;

    let lower = |s: &str| s.to_lowercase();
    let real: BTreeSet<String> = f.patients.iter().flat_map(|p| [lower(&p.first_name), lower(&p.last_name)]).collect();
    let pool = NamePool::bundled_sample();
    let unused: BTreeSet<String> = pool
        .first_names
        .iter()
        .chain(&pool.last_names)
        .map(|n| lower(&n.name))
        .filter(|n| !real.contains(n))
        .collect();
    if unused.len() < real.len() {
        return Err("name pool too small for decoys".into());
    }
    let swap: BTreeMap<&String, &String> = real.iter().zip(&unused).collect();

    let decoys = PatientTable::new(f.patients.iter().enumerate().map(|(i, p)| PatientRecord {
        patient_id: PatientId(format!("D{i:05}")),
        first_name: swap[&lower(&p.first_name)].clone(),
        last_name: swap[&lower(&p.last_name)].clone(),
        reidentified: false,
        ..p.clone()
    }))
    .map_err(err)?;
    let everyone = PatientTable::new(f.patients.iter().chain(decoys.iter()).cloned()).map_err(err)?;
    let gaz = NameGazetteer::from_patients(&everyone);

    let mut all: Vec<Sample> = samples.clone();
    all.extend(samples.iter().map(|s| Sample {
        tokens: s.tokens.iter().map(|t| swap.get(&lower(t)).map_or_else(|| t.clone(), |d| d.to_string())).collect(),
        ..s.clone()
    }));
    let mut mentions = detect_names(&all, &gaz);
    comparator_scores(&all, &mut mentions, &target, &comparator).map_err(err)?;
    let ranked = rank_names(&mentions, &gaz, false);
    let scores: Vec<f64> = ranked.iter().map(|r| r.score).collect();
    let labels: Vec<bool> = ranked.iter().map(|r| r.reidentified_owner).collect();
    Ok((auc(&scores, &labels).map_err(err)?, ranked.len()))
}

// ---- determinism ----

fn run_everything(out: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let config = AuditConfig {
        seed: Some(13),
        out: out.to_path_buf(),
        ..Default::default()
    };
    cmd_synth(&config).map_err(err)?;
    cmd_train(&config, TrainTarget::All).map_err(err)?;
    cmd_attack(&config, AttackName::All).map_err(err)?;
    cmd_report(&config).map_err(err)?;
    let dir = Layout::new(out).reports();
    std::fs::read_dir(&dir)
        .map_err(err)?
        .map(|e| {
            let path = e.map_err(err)?.path();
            let bytes = std::fs::read(&path).map_err(err)?;
            Ok((path.file_name().unwrap_or_default().to_string_lossy().into_owned(), bytes))
        })
        .collect()
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?);
    let first = run_everything(a.path())?;
    let second = run_everything(b.path())?;
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    Ok((
        !first.is_empty() && first.len() == second.len() && differing.is_empty(),
        format!("{} report files compared, {} differ {:?}", first.len(), differing.len(), differing),
    ))
}
