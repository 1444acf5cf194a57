mod common;

use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use codeie_core::backend::{
    oracle_backend, BackendError, Completion, CompletionBackend, DecodingConfig, OracleBackend, Perturbation,
};
use codeie_core::corpus::{generate_fixture, Dataset};
use codeie_core::orchestrator::{compare_designs, run_experiment, BackendSpec, Experiment, RunError, RunManifest};
use codeie_core::prompt::RenderedPrompt;
use codeie_core::PromptDesign;
use common::{ner_schema, re_schema};
use tempfile::TempDir;

fn fixture(schema: &codeie_core::Schema, n: usize) -> (TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_fixture(schema, n, 21);
    ds.write(&dir.path().join("data")).unwrap();
    (dir, ds)
}

fn manifest(dir: &TempDir, design: PromptDesign, out: &str) -> RunManifest {
    RunManifest::new(dir.path().join("data"), design, 2, dir.path().join(out))
}

#[test]
fn oracle_report_is_design_agnostic() {
    let (dir, _) = fixture(&re_schema(), 30);
    let a = run_experiment(&manifest(&dir, PromptDesign::FuncDef, "a")).unwrap();
    let b = run_experiment(&manifest(&dir, PromptDesign::StructLang, "b")).unwrap();
    assert_eq!(a.f1.mean, 1.0);
    assert_eq!(a.f1.std, 0.0);
    assert_eq!(a.design, Some(PromptDesign::FuncDef));
    let strip = |mut r: codeie_core::eval::EvalReport| {
        r.design = None;
        r
    };
    assert_eq!(strip(a), strip(b));
}

/// Delegates to an inner backend but fails every call after the first `budget`.
struct DiesAfter {
    inner: OracleBackend,
    budget: usize,
    used: AtomicUsize,
}

impl CompletionBackend for DiesAfter {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn generate(&self, p: &RenderedPrompt, c: &DecodingConfig) -> Result<Completion, BackendError> {
        if self.used.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(BackendError::AuthError("killed".into()));
        }
        self.inner.generate(p, c)
    }
}

#[test]
fn interrupted_run_resumes_to_the_same_report() {
    let (dir, ds) = fixture(&ner_schema(), 40);
    let clean = Experiment::prepare(manifest(&dir, PromptDesign::ClassInit, "clean")).unwrap();
    clean.run().unwrap();
    // Seeds that happen to build the same context share one cache entry.
    let distinct = clean.backend().cache().unwrap().len();
    assert_eq!(clean.backend().backend_calls(), distinct);

    let mut resumed = manifest(&dir, PromptDesign::ClassInit, "resumed");
    resumed.workers = 1;
    let dying = DiesAfter {
        inner: oracle_backend(&ds, PromptDesign::ClassInit),
        budget: 55,
        used: AtomicUsize::new(0),
    };
    let first = Experiment::with_backend(resumed.clone(), ds.clone(), Arc::new(dying)).unwrap();
    let err = first.run().unwrap_err();
    assert_eq!(err.exit_code(), 3);
    drop(first);

    let second = Experiment::prepare(resumed.clone()).unwrap();
    assert_eq!(second.backend().cache().unwrap().len(), 55);
    second.run().unwrap();
    assert_eq!(second.backend().backend_calls(), distinct - 55);
    assert_eq!(
        fs::read(dir.path().join("clean/report.json")).unwrap(),
        fs::read(dir.path().join("resumed/report.json")).unwrap()
    );
}

#[test]
fn warm_cache_makes_no_calls_and_same_bytes() {
    let (dir, _) = fixture(&re_schema(), 25);
    let m = manifest(&dir, PromptDesign::NaturalLang, "run");
    let cold = Experiment::prepare(m.clone()).unwrap();
    cold.run().unwrap();
    assert_eq!(cold.backend().backend_calls(), 75);
    let first = fs::read(dir.path().join("run/report.json")).unwrap();

    let warm = Experiment::prepare(m).unwrap();
    warm.run().unwrap();
    assert_eq!(warm.backend().backend_calls(), 0);
    assert_eq!(first, fs::read(dir.path().join("run/report.json")).unwrap());
}

#[test]
fn compare_tabulates_sorted_rows() {
    let (dir, _) = fixture(&ner_schema(), 20);
    let c = compare_designs(&[
        manifest(&dir, PromptDesign::StructLang, "s"),
        manifest(&dir, PromptDesign::FuncDef, "f"),
    ])
    .unwrap();
    let names: Vec<&str> = c.rows.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["func-def", "struct-lang"]);
    assert_eq!(c.rows[0].1.f1, c.rows[1].1.f1);
    let table = c.table();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().starts_with("func-def"));
    assert!(table.contains("100.00±0.00"));
}

#[test]
fn compare_drop_masks_give_mask_recalls() {
    let (dir, ds) = fixture(&ner_schema(), 60);
    let gold: usize = ds.split("test").unwrap().iter().map(|s| s.entities.len()).sum();
    let mut ms = Vec::new();
    for (name, rate, seed) in [("d1", 0.2, 1u64), ("d2", 0.5, 2)] {
        let mut m = manifest(&dir, PromptDesign::FuncDef, name);
        m.backend = BackendSpec::Oracle {
            perturbation: Perturbation::DropStatements { rate, seed },
        };
        ms.push(m);
    }
    let c = compare_designs(&ms).unwrap();
    let recalls: Vec<f64> = c.rows.iter().map(|(_, r)| r.recall.mean).collect();
    for (r, rate) in recalls.iter().zip([0.2, 0.5]) {
        let kept = gold - (rate * gold as f64).round() as usize;
        assert!((r - kept as f64 / gold as f64).abs() < 1e-12, "{r} vs {rate}");
    }
    assert_ne!(recalls[0], recalls[1]);
    assert!(c.rows.iter().all(|(_, r)| r.precision.mean == 1.0));
}

#[test]
fn mismatched_manifests_are_rejected() {
    let (dir, _) = fixture(&ner_schema(), 5);
    let a = manifest(&dir, PromptDesign::FuncDef, "a");
    let mut b = manifest(&dir, PromptDesign::FuncExec, "b");
    b.dataset = dir.path().join("elsewhere");
    assert!(matches!(compare_designs(&[a, b]), Err(RunError::MismatchedManifests(_))));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = RunManifest::new(dir.path().join("nope"), PromptDesign::FuncDef, 1, dir.path().join("o"));
    assert_eq!(run_experiment(&m).unwrap_err().exit_code(), 2);
}

#[test]
fn artifacts_are_written_per_seed() {
    let (dir, ds) = fixture(&ner_schema(), 10);
    let mut m = manifest(&dir, PromptDesign::FuncInitPerturbed, "run");
    m.seeds = vec![4, 9];
    run_experiment(&m).unwrap();
    let run = dir.path().join("run");
    let test_n = ds.split("test").unwrap().len();
    for seed in [4, 9] {
        for f in ["contexts.jsonl", "completions.jsonl", "outcomes.jsonl"] {
            let text = fs::read_to_string(run.join(format!("seed-{seed}/{f}"))).unwrap();
            assert_eq!(text.lines().count(), test_n, "{f}");
        }
    }
    let saved = RunManifest::load(&run.join("manifest.json")).unwrap();
    assert_eq!(saved, m);
    let report = fs::read_to_string(run.join("report.json")).unwrap();
    assert!(!report.contains("created_at"));
}
