use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use captioncheck::synth;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_captioncheck"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(["--config", "captioncheck.toml"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn pairs24() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/pairs24")
}

fn set_mock_options(dir: &Path, extra: &str) {
    let path = dir.join("captioncheck.toml");
    let text = std::fs::read_to_string(&path).unwrap();
    let text = text.replace("[backends.mock]\n", &format!("[backends.mock]\n{extra}\n"));
    std::fs::write(path, text).unwrap();
}

#[test]
fn full_pipeline_on_synthetic_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = synth::build(tmp.path()).unwrap();
    let dir = tmp.path();
    let n = corpus.records;

    let o = run(dir, &["predict"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("embed"), "{}", stderr(&o));

    let o = run(dir, &["embed"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("generate"), "{}", stderr(&o));

    for stage in ["sanitize", "generate", "embed", "predict", "evaluate"] {
        let o = run(dir, &[stage]);
        assert_eq!(code(&o), 0, "{stage}: {}", stderr(&o));
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["metrics"]["n"], n);
    assert_eq!(std::fs::read_dir(dir.join("images")).unwrap().count(), 2 * n);
    for stage in ["sanitize", "generate", "embed", "predict", "evaluate"] {
        let desc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join(format!("out/{stage}.run.json"))).unwrap()).unwrap();
        assert_eq!(desc["stage"], stage);
        assert!(desc["config_digest"].as_str().is_some_and(|d| !d.is_empty()));
    }

    let o = run(dir, &["--mode", "gen-vs-gen", "predict"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(dir, &["evaluate"]);
    assert!(stdout(&o).contains(&format!("accuracy   1.000  ({n}/{n})")), "{}", stdout(&o));

    let o = run(dir, &["matrix"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.join("out/matrix.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("encoder,detector,mode,status"));
}

#[test]
fn evaluate_external_predictions_prints_exact_fractions() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bin()
        .current_dir(tmp.path())
        .args(["--out", "o", "evaluate", "--predictions"])
        .arg(pairs24().join("clip_sd.jsonl"))
        .arg("--gold")
        .arg(pairs24().join("gold.jsonl"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("accuracy   0.625  (15/24)"), "{out}");
    assert!(out.contains("precision  0.615  (8/13)"), "{out}");
    assert!(tmp.path().join("o/metrics.json").exists());
}

#[test]
fn survey_ratings_out_of_bounds_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ratings = tmp.path().join("r.csv");
    std::fs::write(&ratings, "pair_id,participant_id,rating\n1699,p1,7\n1699,p2,11\n").unwrap();
    let o = bin()
        .current_dir(tmp.path())
        .args(["survey", "--ratings"])
        .arg(&ratings)
        .output()
        .unwrap();
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("11"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("captioncheck.toml"), "no_such_key = 1\n").unwrap();
    let o = run(tmp.path(), &["sanitize"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    synth::build(tmp.path()).unwrap();
    let o = run(tmp.path(), &["--encoder", "not-a-model", "embed"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(tmp.path(), &["--backend", "nope", "generate"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn rerunning_generate_makes_no_new_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let corpus = synth::build(dir).unwrap();
    set_mock_options(dir, "call_log = \"calls.log\"");
    assert_eq!(code(&run(dir, &["sanitize"])), 0);
    assert_eq!(code(&run(dir, &["generate"])), 0);
    let calls = || std::fs::read_to_string(dir.join("calls.log")).unwrap().lines().count();
    assert_eq!(calls(), 2 * corpus.records);
    let o = run(dir, &["generate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(calls(), 2 * corpus.records);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out/generate.report.json")).unwrap()).unwrap();
    assert_eq!(report["skipped"], corpus.records);
    assert_eq!(report["generated"], 0);
}

/// Calls logged for prompts that were already served earlier in the log.
fn duplicate_calls(log: &str) -> usize {
    let mut seen = BTreeSet::new();
    log.lines()
        .filter(|l| !seen.insert(l.splitn(3, '\t').nth(2).unwrap_or_default().to_string()))
        .count()
}

fn crash_and_resume(workers: &str) -> (usize, usize, usize) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let corpus = synth::build(dir).unwrap();
    assert_eq!(code(&run(dir, &["sanitize"])), 0);

    set_mock_options(dir, "call_log = \"calls.log\"\nabort_after_calls = 13");
    let o = run(dir, &["--workers", workers, "generate"]);
    assert!(!o.status.success(), "the injected crash should kill the run");
    let before = std::fs::read_to_string(dir.join("calls.log")).unwrap().lines().count();
    // calls still in flight on other workers die unlogged
    assert!(before <= 13 && before + workers.parse::<usize>().unwrap() > 13, "{before} calls logged");

    let text = std::fs::read_to_string(dir.join("captioncheck.toml")).unwrap();
    std::fs::write(dir.join("captioncheck.toml"), text.replace("abort_after_calls = 13\n", "")).unwrap();
    let o = run(dir, &["--workers", workers, "generate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let log = std::fs::read_to_string(dir.join("calls.log")).unwrap();
    let images = std::fs::read_dir(dir.join("images"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(images, 2 * corpus.records);
    let manifest = captioncheck::corpus::load_manifest(&dir.join("manifest.jsonl")).unwrap();
    assert!(manifest.iter().all(|r| r.gen1.is_some() && r.gen2.is_some()));
    (duplicate_calls(&log), images, log.lines().count())
}

#[test]
fn crash_then_resume_single_worker_has_no_duplicate_calls() {
    let (dups, images, calls) = crash_and_resume("1");
    assert_eq!(dups, 0);
    assert_eq!(calls, images);
}

#[test]
fn crash_then_resume_parallel_loses_at_most_in_flight_calls() {
    let (dups, images, calls) = crash_and_resume("4");
    // only responses still being written when the process died can be re-requested
    eprintln!("parallel crash: {dups} duplicate calls");
    assert!(dups <= 3, "{dups} duplicate calls");
    assert_eq!(calls, images + dups);
}
