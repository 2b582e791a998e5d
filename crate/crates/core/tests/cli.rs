mod common;

use std::path::Path;
use std::process::Command;

use dfpe::cli::{run_captured, write_evaluation, Outcome, EXIT_OK, EXIT_USAGE};
use dfpe::pipeline::run;
use dfpe::sweep::preset;
use dfpe::vote::DisciplineAggregation;

use common::*;

fn cli(args: &[&str]) -> Outcome {
    run_captured(std::iter::once("dfpe").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture_args(out: &Path) -> Vec<String> {
    vec![
        "--dataset".into(),
        fixture("dataset.jsonl").display().to_string(),
        "--predictions".into(),
        fixture("predictions.jsonl").display().to_string(),
        "--discipline-map".into(),
        fixture("disciplines.jsonl").display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ]
}

#[test]
fn usage_errors_exit_two() {
    let o = cli(&["evaluate", "--out", "/tmp/unused"]);
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("missing required flag --dataset"), "{}", o.stderr);

    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["evaluate".to_string(), "--preset".into(), "fastest".into()];
    args.extend(fixture_args(dir.path()));
    let o = run_captured(std::iter::once("dfpe".to_string()).chain(args));
    assert_eq!(o.code, EXIT_USAGE);
    assert!(o.stderr.contains("optimal"), "{}", o.stderr);

    assert_eq!(cli(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(cli(&["evaluate", "--gamma", "abc"]).code, EXIT_USAGE);
    let o = cli(&["ingest-check", "--dataset", "/nonexistent/d.jsonl"]);
    assert_eq!(o.code, EXIT_USAGE);
}

#[test]
fn invalid_parameters_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [["--quantile", "1.5"], ["--eps", "0"], ["--min-pts", "0"], ["--gamma", "-1"]] {
        let mut args: Vec<String> = vec!["evaluate".into(), bad[0].into(), bad[1].into()];
        args.extend(fixture_args(dir.path()));
        let o = run_captured(std::iter::once("dfpe".to_string()).chain(args));
        assert_eq!(o.code, EXIT_USAGE, "{bad:?}: {}", o.stderr);
    }
}

#[test]
fn evaluate_writes_the_same_bytes_as_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let cli_out = dir.path().join("cli");
    let lib_out = dir.path().join("lib");
    let mut args = vec!["evaluate".to_string(), "--preset".into(), "optimal".into()];
    args.extend(fixture_args(&cli_out));
    let o = run_captured(std::iter::once("dfpe".to_string()).chain(args));
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.contains("DFPE"));

    let result = run(&small_inputs(), &preset("optimal").unwrap(), DisciplineAggregation::Pooled).unwrap();
    let files = write_evaluation(&lib_out, &result.report, &result.ensembles).unwrap();
    assert_eq!(files.len(), 5);
    for f in files {
        let name = f.file_name().unwrap();
        assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(cli_out.join(name)).unwrap(), "{name:?}");
    }
    assert!(cli_out.join("run_config.json").exists());

    let o = cli(&["report", "--report", s(&cli_out.join("report.json"))]);
    assert_eq!(o.code, EXIT_OK);
    assert_eq!(o.stdout, std::fs::read_to_string(cli_out.join("report.txt")).unwrap());
    let o = cli(&["report", "--report", s(&cli_out.join("report.json")), "--cooccurrence"]);
    assert_eq!(o.stdout, std::fs::read_to_string(cli_out.join("cooccurrence.csv")).unwrap());
}

#[test]
fn simulate_then_evaluate_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let pool_dir = dir.path().join("pool");
    let o = cli(&["simulate", "--seed", "3", "--out", s(&pool_dir)]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.contains("flagged"));
    for f in ["dataset.jsonl", "predictions.jsonl", "disciplines.jsonl", "accuracy_check.csv", "spec.json"] {
        assert!(pool_dir.join(f).exists(), "{f}");
    }

    let eval_dir = dir.path().join("eval");
    let o = cli(&[
        "evaluate",
        "--dataset",
        s(&pool_dir.join("dataset.jsonl")),
        "--predictions",
        s(&pool_dir.join("predictions.jsonl")),
        "--discipline-map",
        s(&pool_dir.join("disciplines.jsonl")),
        "--gamma",
        "6",
        "--out",
        s(&eval_dir),
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);

    let pool = dfpe::simulate::generate(&dfpe::simulate::SyntheticPoolSpec { seed: 3, ..dfpe::simulate::default_spec(0) }).unwrap();
    let cfg = dfpe::config::RunConfig { gamma: 6.0, ..Default::default() };
    let result = run(&synthetic_inputs(pool), &cfg, DisciplineAggregation::Pooled).unwrap();
    let lib_dir = dir.path().join("lib");
    for f in write_evaluation(&lib_dir, &result.report, &result.ensembles).unwrap() {
        let name = f.file_name().unwrap();
        assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(eval_dir.join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, "gamma = 2.0\nquantile_q = 0.3\n[efficient]\ndbscan_eps = 0.05\n").unwrap();
    let out = dir.path().join("o");
    let mut args = vec![
        "build-ensembles".to_string(),
        "--config".into(),
        s(&cfg_path).into(),
        "--preset".into(),
        "efficient".into(),
        "--quantile".into(),
        "0.1".into(),
    ];
    args.extend(fixture_args(&out));
    let o = run_captured(std::iter::once("dfpe".to_string()).chain(args));
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["gamma"], 2.0);
    assert_eq!(cfg["dbscan_eps"], 0.05);
    assert_eq!(cfg["quantile_q"], 0.1);
}

#[test]
fn pipeline_stage_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for cmd in ["fingerprint", "cluster", "build-ensembles", "predict"] {
        let mut args = vec![cmd.to_string()];
        args.extend(fixture_args(out));
        let o = run_captured(std::iter::once("dfpe".to_string()).chain(args));
        assert_eq!(o.code, EXIT_OK, "{cmd}: {}", o.stderr);
    }
    assert_eq!(std::fs::read_to_string(out.join("fingerprints.jsonl")).unwrap().lines().count(), 15);
    assert!(out.join("clusters.json").exists() && out.join("ensembles.json").exists());
    assert_eq!(std::fs::read_to_string(out.join("dfpe_predictions.jsonl")).unwrap().lines().count(), 36);

    let mut args = vec!["cluster".to_string(), "--dump-distances".into()];
    args.extend(fixture_args(out));
    assert_eq!(run_captured(std::iter::once("dfpe".to_string()).chain(args)).code, EXIT_OK);
    assert!(std::fs::read_to_string(out.join("distances.tsv")).unwrap().contains("alpha"));

    let mut args = vec!["sweep".to_string(), "--axis".into(), "gamma".into(), "--values".into(), "1,5,9".into()];
    args.extend(fixture_args(out));
    let o = run_captured(std::iter::once("dfpe".to_string()).chain(args));
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert_eq!(o.stdout.lines().count(), 4);
    assert!(out.join("sweep_gamma.svg").exists());

    let embeddings = fixture("embeddings.jsonl");
    let mut args = vec![
        "evaluate".to_string(),
        "--fingerprint-strategy".into(),
        "external-embedding".into(),
        "--embeddings".into(),
        embeddings.display().to_string(),
    ];
    args.extend(fixture_args(out));
    let o = run_captured(std::iter::once("dfpe".to_string()).chain(args));
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
}

#[test]
fn ingest_check_prints_counts() {
    let o = cli(&[
        "ingest-check",
        "--dataset",
        s(&fixture("dataset.jsonl")),
        "--predictions",
        s(&fixture("predictions.jsonl")),
        "--discipline-map",
        s(&fixture("disciplines.jsonl")),
    ]);
    assert_eq!(o.code, EXIT_OK, "{}", o.stderr);
    assert!(o.stdout.contains("TOTAL\t24\t36"));
    assert!(o.stdout.contains("models\talpha,bravo,charlie,delta,echo"));
    assert!(o.stdout.contains("incomplete cells\t0"));
    assert!(o.stdout.contains("discipline map covers all subjects"));
}

#[test]
fn binary_reports_version_and_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_dfpe");
    let v = Command::new(bin).arg("--version").output().unwrap();
    assert!(v.status.success());
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
    let bad = Command::new(bin).arg("evaluate").output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_USAGE));
    assert!(!bad.stderr.is_empty() && bad.stdout.is_empty());
}

