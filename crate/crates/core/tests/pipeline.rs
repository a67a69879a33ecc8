use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use leakaudit::config::AuditConfig;
use leakaudit::corpus::synth::DemoSpec;
use leakaudit::pipeline::{cmd_attack, cmd_report, cmd_synth, cmd_train, load_dataset, AttackName, Layout, TrainTarget};
use leakaudit::report::{AttackReport, CSV_HEADER};
use leakaudit::scorer::{serve, ScorerHandle, ToyScorer};
use leakaudit::static_embed::EmbeddingTable;
use leakaudit::Error;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn small_config(out: &Path, seed: u64) -> AuditConfig {
    let mut c = AuditConfig {
        seed: Some(seed),
        out: out.to_path_buf(),
        demo: DemoSpec {
            patients: 30,
            notes_per_patient: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    c.word2vec.dim = 16;
    c.word2vec.epochs = 2;
    c.attacks.probe.epochs = 10;
    c.attacks.generate.num_samples = 12;
    c.attacks.generate.sample_length = 24;
    c.attacks.generate.sweeps = 2;
    c
}

fn tmp(name: &str) -> TempDir {
    tempfile::Builder::new().prefix(name).tempdir().unwrap()
}

/// One fully built output tree shared by the read-only tests.
fn built() -> (&'static AuditConfig, &'static [AttackReport]) {
    static BUILT: OnceLock<(TempDir, AuditConfig, Vec<AttackReport>)> = OnceLock::new();
    let (_, config, reports) = BUILT.get_or_init(|| {
        let dir = tmp("built");
        let config = small_config(dir.path(), 21);
        cmd_synth(&config).unwrap();
        cmd_train(&config, TrainTarget::All).unwrap();
        let reports = cmd_attack(&config, AttackName::All).unwrap();
        (dir, config, reports)
    });
    (config, reports)
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn synth_is_seed_deterministic() {
    let dirs = [tmp("sa"), tmp("sb"), tmp("sc")];
    let a = small_config(dirs[0].path(), 4);
    let b = small_config(dirs[1].path(), 4);
    let c = small_config(dirs[2].path(), 5);
    for cfg in [&a, &b, &c] {
        cmd_synth(cfg).unwrap();
    }
    let la = Layout::new(&a.out);
    let fa = files(&la.corpus());
    assert_eq!(fa.len(), 8);
    assert_eq!(fa, files(&Layout::new(&b.out).corpus()));
    assert_ne!(fa, files(&Layout::new(&c.out).corpus()));
}

#[test]
fn synth_stats_match_a_rescan() {
    let (config, _) = built();
    let layout = Layout::new(&config.out);
    let stats: serde_json::Value =
        serde_json::from_slice(&std::fs::read(layout.corpus().join("stats.json")).unwrap()).unwrap();
    for variant in ["deidentified", "reidentified", "name_insertion", "template_only"] {
        let text = std::fs::read_to_string(layout.variant_notes(variant)).unwrap();
        assert_eq!(stats["notes"][variant], text.lines().count(), "{variant}");
    }
    let data = load_dataset(&layout).unwrap();
    let reid = data.patients.iter().filter(|p| p.reidentified).count();
    assert_eq!(stats["names"]["reidentified_patients"], reid);
    assert_eq!(stats["corpus"]["patients_mentioned"], reid);
    assert_eq!(stats["positive_cells"], data.matrix.positive_cells());
    let reidentified = std::fs::read_to_string(layout.variant_notes("reidentified")).unwrap();
    assert!(!reidentified.contains("Known First Name"));
    let template = std::fs::read_to_string(layout.variant_notes("template_only")).unwrap();
    assert_eq!(template.matches("is a yo patient with").count(), data.matrix.positive_cells());
}

#[test]
fn training_is_reproducible() {
    let (config, _) = built();
    let layout = Layout::new(&config.out);
    let manifest: BTreeMap<String, String> =
        serde_json::from_slice(&std::fs::read(layout.models().join("manifest.json")).unwrap()).unwrap();
    for (name, sum) in &manifest {
        let bytes = std::fs::read(layout.models().join(name)).unwrap();
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(&hex, sum, "{name}");
    }
    let again_dir = tmp("retrain");
    let again = small_config(again_dir.path(), 21);
    cmd_synth(&again).unwrap();
    assert_eq!(cmd_train(&again, TrainTarget::All).unwrap(), manifest);

    let a = ToyScorer::load(&layout.toy("reidentified")).unwrap();
    let b = ToyScorer::load(&Layout::new(&again.out).toy("reidentified")).unwrap();
    let (a, b) = (ScorerHandle::new(a), ScorerHandle::new(b));
    let s = |h: &ScorerHandle| h.score_raw("[CLS] pt is a", "yo [SEP]", "gout").unwrap();
    assert_eq!(s(&a), s(&b));

    let path = layout.models().join("w2v-skipgram-reidentified.txt");
    let table = EmbeddingTable::load_text(&path).unwrap();
    let copy_dir = tmp("w2v");
    let copy = copy_dir.path().join("copy.txt");
    table.save_text(&copy).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&copy).unwrap());
}

fn split_csv(line: &str) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                chars.next();
                out.last_mut().unwrap().push('"');
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(String::new()),
            _ => out.last_mut().unwrap().push(c),
        }
    }
    out
}

#[test]
fn every_attack_writes_a_valid_report() {
    let (config, reports) = built();
    assert_eq!(reports.len(), AttackName::EACH.len());
    let dir = Layout::new(&config.out).reports();
    for attack in AttackName::EACH {
        let csv = std::fs::read_to_string(dir.join(format!("{}.csv", attack.as_str()))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let mut n = 0;
        for line in lines {
            let cols = split_csv(line);
            assert_eq!(cols.len(), 12, "{line}");
            assert_eq!(cols[0], attack.as_str());
            for i in [4, 5, 6, 9, 10] {
                if !cols[i].is_empty() {
                    let v: f64 = cols[i].parse().unwrap();
                    assert!(v.is_finite());
                }
            }
            for i in [4, 5] {
                if !cols[i].is_empty() {
                    let v: f64 = cols[i].parse().unwrap();
                    assert!((0.0..=1.0).contains(&v), "{line}");
                }
            }
            if !cols[11].is_empty() {
                cols[11].parse::<usize>().unwrap();
            }
            n += 1;
        }
        assert!(n > 0, "{} produced no rows", attack.as_str());
        let sidecar = AttackReport::load(&dir.join(format!("{}.json", attack.as_str()))).unwrap();
        assert_eq!(sidecar.meta["master_seed"], 21);
        assert_eq!(sidecar.meta["config"]["seed"], 21);
        assert!(sidecar.meta["config"].get("out").is_none());
    }
    let gen = Layout::new(&config.out).generate("toy-reidentified");
    let samples = std::fs::read_to_string(gen.join("samples.jsonl")).unwrap();
    assert_eq!(samples.lines().count(), 12);
}

#[test]
fn consolidation_is_concatenation() {
    let (config, _) = built();
    let dir = Layout::new(&config.out).reports();
    let report = cmd_report(config).unwrap();
    let mut names: Vec<&str> = AttackName::EACH.iter().map(|a| a.as_str()).collect();
    names.sort();
    let mut expected = String::from(CSV_HEADER);
    expected.push('\n');
    let mut rows = Vec::new();
    for name in &names {
        let csv = std::fs::read_to_string(dir.join(format!("{name}.csv"))).unwrap();
        for line in csv.lines().skip(1) {
            expected.push_str(line);
            expected.push('\n');
        }
        rows.extend(AttackReport::load(&dir.join(format!("{name}.json"))).unwrap().rows);
    }
    assert_eq!(std::fs::read_to_string(dir.join("report.csv")).unwrap(), expected);
    assert_eq!(report.rows, rows);
    let sections: Vec<&String> = report.meta.as_object().unwrap().keys().collect();
    assert_eq!(sections.len(), names.len());
}

#[test]
fn report_with_one_attack_has_one_section() {
    let dir = tmp("one");
    let config = small_config(dir.path(), 8);
    assert!(matches!(cmd_report(&config), Err(Error::Io { .. })));
    std::fs::create_dir_all(Layout::new(&config.out).reports()).unwrap();
    assert!(matches!(cmd_report(&config), Err(Error::InvalidInput(_))));
    cmd_synth(&config).unwrap();
    cmd_train(&config, TrainTarget::Toy).unwrap();
    cmd_attack(&config, AttackName::Prior).unwrap();
    let r = cmd_report(&config).unwrap();
    assert_eq!(r.meta.as_object().unwrap().len(), 1);
    assert!(r.rows.iter().all(|row| row.attack == "prior"));
}

#[test]
fn unknown_attack_is_a_usage_error() {
    let err = "membership".parse::<AttackName>().unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn remote_scorer_reproduces_toy_report() {
    let (config, _) = built();
    let layout = Layout::new(&config.out);
    let toy = ToyScorer::load(&layout.toy("reidentified")).unwrap().with_tag("toy-reidentified");
    let bridge = serve(ScorerHandle::new(toy), "127.0.0.1:0", 4).unwrap();

    let remote_dir = tmp("remote");
    let remote_out = remote_dir.path();
    let mut rc = config.clone();
    rc.out = remote_out.to_path_buf();
    rc.scorer = format!("remote:{}", bridge.url());
    for sub in ["corpus", "models"] {
        let dst = remote_out.join(sub);
        std::fs::create_dir_all(&dst).unwrap();
        for (name, bytes) in files(&config.out.join(sub)) {
            std::fs::write(dst.join(name), bytes).unwrap();
        }
    }
    let remote = cmd_attack(&rc, AttackName::Fib).unwrap().remove(0);
    let local = AttackReport::load(&layout.reports().join("fib.json")).unwrap();
    let local_rows: Vec<_> = local
        .rows
        .iter()
        .filter(|r| r.model_tag == "toy-reidentified" || r.source.as_deref() == Some("toy-reidentified"))
        .collect();
    assert_eq!(remote.rows.len(), local_rows.len());
    for (a, b) in remote.rows.iter().zip(local_rows) {
        assert_eq!((&a.model_tag, &a.bin), (&b.model_tag, &b.bin));
        for (x, y) in [(a.auc, b.auc), (a.a_at_10, b.a_at_10), (a.spearman, b.spearman)] {
            match (x, y) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-6),
                (x, y) => assert_eq!(x, y),
            }
        }
    }
}
