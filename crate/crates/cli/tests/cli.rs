use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use negmine_core::kb::write_tsv;
use negmine_core::synthetic::{planted_rule_kb, PlantedRuleConfig};

const FAST: &[&str] = &["--set", "epochs=8", "--set", "hidden=8"];

fn toy_kb(dir: &Path) -> PathBuf {
    let cfg = PlantedRuleConfig {
        relations: 3,
        items_per_cluster: 6,
        positives_per_relation: 60,
        negatives_per_relation: 12,
        ..PlantedRuleConfig::default()
    };
    let data = planted_rule_kb(&cfg).unwrap();
    let path = dir.join("toy.tsv");
    let mut buf = Vec::new();
    write_tsv(&mut buf, &data.triples, false).unwrap();
    std::fs::write(&path, buf).unwrap();
    path
}

fn negmine(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_negmine"))
        .arg("--out-dir")
        .arg(out)
        .args(FAST)
        .args(args)
        .env_remove("NEGMINE_OUT_DIR")
        .env_remove("NEGMINE_THREADS")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = negmine(out, args);
    assert!(
        o.status.success(),
        "negmine {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn stderr_line(o: &Output) -> String {
    let text = String::from_utf8(o.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("negmine: error")).collect();
    assert_eq!(lines.len(), 1, "expected one diagnostic, got {text:?}");
    lines[0].to_string()
}

/// Runs every stage and returns the output directory's files by name.
fn pipeline(work: &Path, out: &Path) -> BTreeMap<String, Vec<u8>> {
    let kb = toy_kb(work);
    ok(out, &["split", "--kb", kb.to_str().unwrap()]);
    ok(out, &["train"]);
    ok(out, &["thresholds"]);
    ok(out, &["candidates", "--k", "10"]);
    for method in ["theta", "grad", "grad-fast", "none"] {
        ok(out, &["rank", "--method", method, "--n", "50"]);
    }
    ok(out, &["sample", "--sampler", "uniform"]);
    ok(out, &["sample", "--sampler", "mined-grad"]);
    ok(
        out,
        &["evaluate", "--sampler", "uniform", "--sampler", "mined-theta", "--trials", "2", "--baseline", "uniform"],
    );
    ok(out, &["report"]);
    std::fs::read_dir(out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn rank_without_checkpoint_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = negmine(dir.path(), &["rank", "--method", "theta"]);
    assert_eq!(o.status.code(), Some(2));
    let line = stderr_line(&o);
    let expected = dir.path().join("scorer.ckpt");
    assert!(line.contains("code=2"), "{line}");
    assert!(line.contains(&format!("path={:?}", expected.display().to_string())), "{line}");
}

#[test]
fn full_pipeline_produces_consistent_artifacts() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("run");
    let files = pipeline(work.path(), &out);
    for name in [
        "train.tsv",
        "validation.tsv",
        "test.tsv",
        "scorer.ckpt",
        "train_loss.tsv",
        "thresholds.tsv",
        "candidates.tsv",
        "ranked.theta.tsv",
        "ranked.grad.tsv",
        "ranked.grad-fast.tsv",
        "ranked.none.tsv",
        "negatives.uniform.tsv",
        "negatives.mined-grad.tsv",
        "report.tsv",
        "trials.tsv",
        "summary.txt",
        "report.md",
    ] {
        assert!(files.contains_key(name), "missing {name}");
    }
    assert!(!files.contains_key(".negmine.lock"));

    let text = |name: &str| String::from_utf8(files[name].clone()).unwrap();
    let thresholded: HashSet<String> = text("thresholds.tsv")
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    let theta = text("ranked.theta.tsv");
    assert!(!theta.is_empty());
    for line in theta.lines() {
        let rel = line.split('\t').nth(1).unwrap();
        assert!(thresholded.contains(rel), "{rel} has no threshold");
    }
    let candidates = text("candidates.tsv").lines().count();
    assert_eq!(text("ranked.grad.tsv").lines().count(), candidates);
    assert_eq!(text("ranked.none.tsv").lines().count(), candidates);

    let train_positives = text("train.tsv").lines().filter(|l| l.ends_with("\t1")).count();
    let negatives = text("negatives.mined-grad.tsv");
    assert_eq!(negatives.lines().count(), train_positives);
    assert!(negatives.lines().all(|l| l.ends_with("\t0")));

    let report = text("report.tsv");
    let acc: Vec<&str> = report.lines().filter(|l| l.contains("\taccuracy\t")).collect();
    assert_eq!(acc.len(), 2);
    assert!(acc.iter().all(|l| l.ends_with("\t2")));
    assert!(text("report.md").starts_with("| sampler |"));
}

#[test]
fn evaluate_uniform_reports_five_trials() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("run");
    let kb = toy_kb(work.path());
    ok(&out, &["split", "--kb", kb.to_str().unwrap()]);
    ok(&out, &["evaluate", "--sampler", "uniform", "--trials", "5"]);
    let trials = std::fs::read_to_string(out.join("trials.tsv")).unwrap();
    let accs: Vec<f64> = trials
        .lines()
        .skip(1)
        .map(|l| l.split('\t').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(accs.len(), 5);
    let report = std::fs::read_to_string(out.join("report.tsv")).unwrap();
    let row: Vec<&str> = report.lines().find(|l| l.starts_with("uniform\taccuracy")).unwrap().split('\t').collect();
    let mean = accs.iter().sum::<f64>() / 5.0;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    // trials.tsv rounds each value to 6 decimals.
    assert!((row[2].parse::<f64>().unwrap() - mean).abs() < 1e-5);
    assert!((row[3].parse::<f64>().unwrap() - std).abs() < 1e-5);
    assert_eq!(row[5], "5");
}

#[test]
fn identical_runs_are_byte_identical() {
    let work = tempfile::tempdir().unwrap();
    let a = pipeline(work.path(), &work.path().join("a"));
    let b = pipeline(work.path(), &work.path().join("b"));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs between runs");
    }
}

#[test]
fn dry_run_checks_inputs_and_writes_nothing() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("run");
    let kb = toy_kb(work.path());
    let plan = ok(&out, &["--dry-run", "split", "--kb", kb.to_str().unwrap()]);
    assert!(plan.lines().any(|l| l.starts_with("plan stage=split write=")));
    assert!(!out.exists());
    let o = negmine(&out, &["--dry-run", "train"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validation_failures_exit_3() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path();
    let cfg = work.path().join("bad.conf");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = negmine(out, &["--config", cfg.to_str().unwrap(), "config"]);
    assert_eq!(o.status.code(), Some(3));
    stderr_line(&o);
    let o = negmine(out, &["--set", "k=ten", "config"]);
    assert_eq!(o.status.code(), Some(0));
    let kb = toy_kb(work.path());
    ok(out, &["split", "--kb", kb.to_str().unwrap()]);
    ok(out, &["train"]);
    let o = negmine(out, &["candidates", "--set", "k=ten"]);
    assert_eq!(o.status.code(), Some(3));
    let o = negmine(out, &["rank", "--method", "sideways"]);
    assert_eq!(o.status.code(), Some(3));
    let o = negmine(out, &["--bogus-flag", "train"]);
    assert_eq!(o.status.code(), Some(3));
    stderr_line(&o);
}

#[test]
fn theta_needs_fitted_thresholds() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path();
    let kb = toy_kb(work.path());
    ok(out, &["split", "--kb", kb.to_str().unwrap()]);
    ok(out, &["train"]);
    ok(out, &["candidates"]);
    let o = negmine(out, &["rank", "--method", "theta"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).contains("thresholds"));
}

#[test]
fn held_lock_blocks_writes() {
    let work = tempfile::tempdir().unwrap();
    let kb = toy_kb(work.path());
    std::fs::write(work.path().join(".negmine.lock"), "1\n").unwrap();
    let o = negmine(work.path(), &["split", "--kb", kb.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).contains("locked"));
    assert!(!work.path().join("train.tsv").exists());
}

#[test]
fn seed_flag_and_environment_override_config() {
    let work = tempfile::tempdir().unwrap();
    let cfg = work.path().join("run.conf");
    std::fs::write(&cfg, "seed = 5\nthreads = 2\nout_dir = from-config\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_negmine"))
        .args(["--config", cfg.to_str().unwrap(), "--seed", "9", "config"])
        .env("NEGMINE_THREADS", "4")
        .env("NEGMINE_OUT_DIR", "from-env")
        .output()
        .unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 9\n"), "{text}");
    assert!(text.contains("threads = 4\n"), "{text}");
    assert!(text.contains("out_dir = from-env\n"), "{text}");
}

#[test]
fn missing_lexicon_for_antonyms() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path();
    let kb = toy_kb(work.path());
    ok(out, &["split", "--kb", kb.to_str().unwrap()]);
    let o = negmine(out, &["sample", "--sampler", "antonyms"]);
    assert_eq!(o.status.code(), Some(3));
    let o = negmine(out, &["sample", "--sampler", "antonyms", "--lexicon", "nope.tsv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("nope.tsv"));
}
