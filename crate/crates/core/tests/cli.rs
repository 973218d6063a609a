use std::fs;
use std::path::{Path, PathBuf};

use adasim::cli::{execute, Cli, RunManifest, RunStatus, Status};
use adasim::simcache::NeighborRecord;
use adasim::trainer::RunFiles;
use adasim::Error;
use clap::Parser;

fn run(args: &[&str]) -> adasim::Result<(Status, String)> {
    let cli = Cli::try_parse_from(std::iter::once("adasim").chain(args.iter().copied())).expect("arguments parse");
    let mut out = Vec::new();
    let status = execute(cli, &mut out)?;
    Ok((status, String::from_utf8(out).unwrap()))
}

const SMALL: [&str; 8] = ["--per-class", "24", "--epochs", "8", "--window", "3", "--batch", "32"];

fn pretrain(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.to_str().unwrap();
    let mut args = vec!["pretrain", "--out", out];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    let (status, _) = run(&args).unwrap();
    assert_eq!(status, Status::Done);
    dir.to_path_buf()
}

#[test]
fn negative_tau_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    match run(&["pretrain", "--tau", "-1", "--out", out.to_str().unwrap()]) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "tau"),
        other => panic!("{other:?}"),
    }
    assert!(!out.join(RunFiles::MANIFEST).exists());
}

#[test]
fn pretrain_is_reproducible_and_self_describing() {
    let tmp = tempfile::tempdir().unwrap();
    let a = pretrain(&tmp.path().join("a"), &["--mode", "adasim", "--tau", "0.2", "--topk", "10", "--seed", "1"]);
    let b = pretrain(&tmp.path().join("b"), &["--mode", "adasim", "--tau", "0.2", "--topk", "10", "--seed", "1"]);
    let ma = fs::read(a.join(RunFiles::METRICS)).unwrap();
    assert_eq!(ma, fs::read(b.join(RunFiles::METRICS)).unwrap());
    assert_eq!(String::from_utf8(ma).unwrap().lines().count(), 8);
    let m = RunManifest::load(&a).unwrap();
    assert_eq!(m.status, RunStatus::Completed);
    assert_eq!(m.config.seed, 1);
    assert!(m.finished_at.is_some());
    assert!(a.join(RunFiles::CACHE).exists());
    // A finished run directory is never overwritten.
    assert!(run(&["pretrain", "--out", a.to_str().unwrap()]).is_err());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"tau": 0.5, "window": 4, "epochs": 6}"#).unwrap();
    let dir = tmp.path().join("r");
    let (status, _) = run(&[
        "pretrain",
        "--config",
        cfg.to_str().unwrap(),
        "--tau",
        "0.1",
        "--per-class",
        "16",
        "--out",
        dir.to_str().unwrap(),
    ])
    .unwrap();
    assert_eq!(status, Status::Done);
    let m = RunManifest::load(&dir).unwrap();
    assert_eq!((m.config.tau, m.config.window, m.config.epochs), (0.1, 4, 6));

    fs::write(&cfg, r#"{"temperature": 0.5}"#).unwrap();
    assert!(run(&["pretrain", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()]).is_err());
}

#[test]
fn runs_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    std::env::set_var("ADASIM_RUNS", tmp.path());
    let mut args = vec!["pretrain", "--mode", "standard", "--seed", "9"];
    args.extend_from_slice(&SMALL);
    let (_, out) = run(&args).unwrap();
    std::env::remove_var("ADASIM_RUNS");
    let dir = PathBuf::from(out.lines().next().unwrap());
    assert!(dir.starts_with(tmp.path()));
    assert!(dir.join(RunFiles::METRICS).exists());
}

#[test]
fn compare_three_modes_and_collapse_dash() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<PathBuf> = ["standard", "nn", "adasim"]
        .iter()
        .map(|m| pretrain(&tmp.path().join(m), &["--mode", m]))
        .collect();
    let names: Vec<&str> = runs.iter().map(|r| r.to_str().unwrap()).collect();
    let mut args = vec!["compare"];
    args.extend_from_slice(&names);
    let (_, first) = run(&args).unwrap();
    let (_, second) = run(&args).unwrap();
    assert_eq!(first, second);
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("standard,standard,"));
    assert!(lines[2].starts_with("nn,nn,"));

    let blown = tmp.path().join("blown");
    let mut args = vec!["pretrain", "--out", blown.to_str().unwrap(), "--lr", "1e12"];
    args.extend_from_slice(&SMALL);
    let (status, _) = run(&args).unwrap();
    assert_eq!(status, Status::Collapsed);
    assert!(blown.join(RunFiles::COLLAPSE).exists());
    assert_eq!(RunManifest::load(&blown).unwrap().status, RunStatus::Collapsed);

    let csv = tmp.path().join("table.csv");
    let (_, _) = run(&["compare", names[0], blown.to_str().unwrap(), "--out", csv.to_str().unwrap()]).unwrap();
    let table = fs::read_to_string(&csv).unwrap();
    let row = table.lines().nth(2).unwrap();
    assert!(row.contains(",-,-,"), "{row}");
    assert!(row.ends_with("true"));

    assert!(run(&["compare", names[0], tmp.path().join("missing").to_str().unwrap()]).is_err());
}

fn read_records(path: &Path) -> Vec<NeighborRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn neighbor_dump_contracts() {
    let tmp = tempfile::tempdir().unwrap();
    let zero = pretrain(&tmp.path().join("zero"), &["--mode", "adasim", "--tau", "0"]);
    let (_, _) = run(&["dump-neighbors", zero.to_str().unwrap()]).unwrap();
    let records = read_records(&zero.join(RunFiles::NEIGHBORS));
    assert!(!records.is_empty());
    // Zero temperature puts all mass on the argmax, so the gate can only ever yield a self pair.
    assert!(records.iter().all(|r| r.support[0].1 == 1.0 && r.support[1..].iter().all(|s| s.1 == 0.0)));
    let log = adasim::trainer::read_metrics_jsonl(&zero.join(RunFiles::METRICS)).unwrap();
    assert!(log.iter().all(|m| m.bootstrap_ratio == 0.0));

    let warm = pretrain(&tmp.path().join("warm"), &["--mode", "adasim", "--epochs", "3"]);
    let out = tmp.path().join("n.jsonl");
    let (_, _) = run(&[
        "dump-neighbors",
        warm.to_str().unwrap(),
        "--first-not-self",
        "--top-n",
        "5",
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let records = read_records(&out);
    assert!(!records.is_empty());
    for r in &records {
        assert_ne!(r.support[0].0, r.query_index);
        assert!(r.support.len() <= 5);
        assert!(r.support.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    assert!(matches!(
        run(&["dump-neighbors", warm.to_str().unwrap(), "--queries", "0,100000"]),
        Err(Error::IndexOutOfRange { .. })
    ));
}

#[test]
fn evaluate_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let r = pretrain(&tmp.path().join("r"), &[]);
    let (_, out) = run(&["evaluate", r.to_str().unwrap(), "--episodes", "20"]).unwrap();
    assert_eq!(out.lines().count(), 3);
    let reports: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(r.join(RunFiles::EVAL)).unwrap()).unwrap();
    let protocols: Vec<&str> = reports.iter().map(|v| v["protocol"].as_str().unwrap()).collect();
    assert_eq!(protocols, ["knn", "linear", "fewshot"]);
    assert_eq!(reports[2]["episodes"], 20);
}

#[test]
fn plot_contracts() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<PathBuf> = ["0", "0.2", "1"]
        .iter()
        .map(|t| pretrain(&tmp.path().join(format!("tau{t}")), &["--mode", "adasim", "--tau", t]))
        .collect();
    let files: Vec<String> = runs.iter().map(|r| r.join(RunFiles::METRICS).display().to_string()).collect();
    let svg = tmp.path().join("ratio.svg");
    let mut args = vec!["plot", "--metric", "bootstrap_ratio", "--out", svg.to_str().unwrap()];
    args.extend(files.iter().map(String::as_str));
    run(&args).unwrap();
    let body = fs::read_to_string(&svg).unwrap();
    assert_eq!(body.matches("<polyline").count(), 3);
    for t in ["τ=0<", "τ=0.2<", "τ=1<"] {
        assert!(body.contains(t), "legend lacks {t}");
    }
    run(&args).unwrap();
    assert_eq!(body, fs::read_to_string(&svg).unwrap());

    let single = tmp.path().join("one.svg");
    run(&["plot", "--metric", "bootstrap_ratio", "--out", single.to_str().unwrap(), &files[0]]).unwrap();
    assert_eq!(fs::read_to_string(&single).unwrap().matches("<polyline").count(), 1);

    let err = run(&["plot", "--metric", "accuracy", "--out", svg.to_str().unwrap(), &files[0]])
        .unwrap_err()
        .to_string();
    assert!(err.contains("bootstrap_ratio") && err.contains("embed_std"), "{err}");

    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let none = tmp.path().join("none.svg");
    assert!(run(&["plot", "--metric", "embed_std", "--out", none.to_str().unwrap(), empty.to_str().unwrap()]).is_err());
    assert!(!none.exists());
}
