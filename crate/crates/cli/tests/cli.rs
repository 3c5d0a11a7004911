use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn boundnull(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boundnull"))
        .args(args)
        .current_dir(root())
        .output()
        .unwrap()
}

fn json_ok(args: &[&str]) -> Value {
    let out = boundnull(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn without_timing(bytes: &[u8]) -> String {
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let cut = text.find("\"timing\"").expect("timing field");
    text[..cut].to_string()
}

#[test]
fn table1_no_effect_test() {
    let v = json_ok(&["test", "--input", "fixtures/table1.csv", "--stat", "diff-means", "--null", "0", "--direction", "non-superiority", "--mode", "exact"]);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["result"]["p"]["numerator"], 522);
    assert_eq!(v["result"]["p"]["denominator"], 12870);
    assert_eq!(v["result"]["reject"], true);
    assert!((v["result"]["t_obs"].as_f64().unwrap() - 1.1275).abs() < 1e-12);
    assert_eq!(v["config"]["statistic"], "diff-means");
}

#[test]
fn timing_is_the_last_field() {
    let out = boundnull(&["test", "--input", "fixtures/table1.csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let timing = text.find("\n  \"timing\"").unwrap();
    for key in ["schema_version", "version", "config", "result"] {
        assert!(text.find(&format!("\n  \"{key}\"")).unwrap() < timing, "{key}");
    }
}

#[test]
fn per_unit_null_column_and_variants() {
    let base = ["test", "--input", "fixtures/table1.csv", "--null-column", "tau0", "--direction", "sharp"];
    let v = json_ok(&base);
    assert_eq!(v["result"]["p"]["numerator"], 349);
    for (variant, count) in [("control-baseline", 451), ("treated-baseline", 327)] {
        let mut args = base.to_vec();
        args.extend(["--impute", variant]);
        assert_eq!(json_ok(&args)["result"]["p"]["numerator"], count);
    }
}

#[test]
fn welch_bounded_test_is_refused() {
    let out = boundnull(&["test", "--input", "fixtures/table1.csv", "--stat", "welch-t", "--direction", "non-superiority"]);
    assert_eq!(out.status.code(), Some(4));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "NonEIStatistic");
    // the sharp test with the t statistic is still available
    json_ok(&["test", "--input", "fixtures/table1.csv", "--stat", "welch-t", "--direction", "sharp"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "id,w,y\n").unwrap();
    let out = boundnull(&["test", "--input", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "DegenerateDesign");

    let words = dir.path().join("words.csv");
    std::fs::write(&words, "id,w,y\n1,yes,1\n2,no,2\n").unwrap();
    let out = boundnull(&["test", "--input", words.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "ParseError");

    assert_eq!(boundnull(&["test", "--input", "missing.csv"]).status.code(), Some(3));
    assert_eq!(boundnull(&["test", "--bogus"]).status.code(), Some(2));
    assert_eq!(boundnull(&["test", "--input", "fixtures/table1.csv", "--draws", "10"]).status.code(), Some(2));
    assert_eq!(boundnull(&["ci", "--input", "fixtures/table1.csv", "--alpha", "1.5"]).status.code(), Some(2));
    assert_eq!(boundnull(&["test", "--input", "fixtures/table1.csv", "--stat", "median"]).status.code(), Some(2));
}

#[test]
fn output_is_reproducible_and_thread_independent() {
    let args = |threads: &'static str| {
        vec!["test", "--input", "fixtures/table1.csv", "--stat", "stephenson:4", "--mode", "mc", "--draws", "20000", "--seed", "9", "--threads", threads]
    };
    let a = boundnull(&args("1"));
    let b = boundnull(&args("1"));
    let c = boundnull(&args("3"));
    assert!(a.status.success());
    assert_eq!(without_timing(&a.stdout), without_timing(&b.stdout));
    // only the echoed thread count may differ
    assert_eq!(
        without_timing(&a.stdout).replace("\"threads\": 1", "\"threads\": 3"),
        without_timing(&c.stdout)
    );
}

#[test]
fn reference_distribution_export() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dist.csv");
    json_ok(&["test", "--input", "fixtures/table1.csv", "--stat", "rank-sum", "--direction", "sharp", "--export-dist", path.to_str().unwrap()]);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("value,count"));
    let total: u64 = lines.map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 12870);
}

#[test]
fn paired_fixture_commands() {
    let v = json_ok(&["simultaneous", "--input", "fixtures/paired8.csv", "--block-col", "block", "--stat", "stephenson:6"]);
    assert_eq!(v["result"]["p_up"]["denominator"], 256);
    assert_eq!(v["result"]["p_down"]["denominator"], 256);
    let p_iu = v["result"]["p_iu"].as_f64().unwrap();
    let up = v["result"]["p_up"]["p"].as_f64().unwrap();
    let down = v["result"]["p_down"]["p"].as_f64().unwrap();
    assert_eq!(p_iu, up.max(down));

    let v = json_ok(&["ci", "--input", "fixtures/paired8.csv", "--block-col", "block", "--target", "max", "--alpha", "0.10", "--stat", "stephenson:6"]);
    assert!(v["result"]["bound"].is_number());
    assert_eq!(v["result"]["outer"], "inf");
    assert!(v["result"]["trace"].as_array().unwrap().len() >= 101);

    let v = json_ok(&["ci", "--input", "fixtures/paired8.csv", "--block-col", "block", "--target", "min", "--alpha", "0.20", "--outcome-range", "0,100"]);
    let outer = v["result"]["outer"].as_f64().unwrap();
    let bound = v["result"]["bound"].as_f64().unwrap();
    assert!(outer <= bound);
}

#[test]
fn oracle_and_sim_subcommands() {
    let v = json_ok(&["oracle", "--input", "fixtures/table1.csv", "--stat", "stephenson:4", "--null", "-0.5"]);
    assert_eq!(v["result"]["agree"], true);
    let v = json_ok(&["oracle", "--ei-check", "--stat", "welch-t", "--trials", "100", "--n", "8"]);
    assert_eq!(v["result"]["agree"], false);
    assert!(v["result"]["witness"]["w"].is_array());
    let v = json_ok(&["sim", "--scenario", "fixtures/scenarios/smoke.toml"]);
    assert_eq!(v["result"]["replications"], 20);
    assert_eq!(v["result"]["rates"].as_array().unwrap().len(), 2);
}

#[test]
fn help_examples_run() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["test", "ci", "simultaneous", "monotonicity", "oracle", "sim"] {
        let out = boundnull(&[sub, "--help"]);
        assert!(out.status.success());
        let help = String::from_utf8(out.stdout).unwrap();
        let examples: Vec<&str> = help.lines().map(str::trim).filter(|l| l.starts_with("boundnull ")).collect();
        assert!(!examples.is_empty(), "{sub} --help has no example");
        for line in examples {
            let args: Vec<String> = line
                .split_whitespace()
                .skip(1)
                .map(|a| if a == "dist.csv" { dir.path().join(a).display().to_string() } else { a.to_string() })
                .collect();
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = boundnull(&refs);
            assert!(out.status.success(), "{line}: {}", String::from_utf8_lossy(&out.stderr));
        }
    }
}
