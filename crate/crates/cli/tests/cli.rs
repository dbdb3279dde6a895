use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_smoothnash"));
    c.env_remove("SMOOTHNASH_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn make(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut full = vec!["make-game"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", p(&out)]);
    let o = run(&full);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn gains(report: &Value) -> Vec<f64> {
    report["report"]["players"].as_array().unwrap().iter().map(|p| p["gain"].as_f64().unwrap()).collect()
}

#[test]
fn verify_reproduces_recorded_gains() {
    let dir = tempfile::tempdir().unwrap();
    let game = make(dir.path(), "g.json", &["random", "--players", "3", "--actions", "3", "--seed", "5"]);
    let solved = dir.path().join("s.json");
    let o = run(&[
        "solve-weak", "--game", p(&game), "--sigma", "0.5", "--epsilon", "0.3", "--c1", "0.02", "--out", p(&solved),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let checked = dir.path().join("v.json");
    let o = run(&[
        "verify", "--game", p(&game), "--profile", p(&solved), "--sigma", "0.5", "--epsilon", "0.3", "--out",
        p(&checked),
    ]);
    assert_eq!(o.status.code(), Some(0));
    for (a, b) in gains(&json(&solved)).iter().zip(gains(&json(&checked))) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn verify_fails_with_status_two_on_tight_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let game = make(dir.path(), "g.json", &["random", "--players", "2", "--actions", "6", "--seed", "8"]);
    let solved = dir.path().join("s.json");
    run(&["solve-weak", "--game", p(&game), "--sigma", "0.5", "--epsilon", "0.4", "--k", "1", "--out", p(&solved)]);
    let gain = gains(&json(&solved)).into_iter().fold(f64::MIN, f64::max);
    if gain > 1e-6 {
        let eps = format!("{}", gain / 2.0);
        let o = run(&["verify", "--game", p(&game), "--profile", p(&solved), "--sigma", "0.5", "--epsilon", &eps]);
        assert_eq!(o.status.code(), Some(2));
    }
}

#[test]
fn query_count_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let game = make(dir.path(), "g.json", &["random", "--players", "2", "--actions", "8", "--seed", "2"]);
    let out = dir.path().join("q.json");
    let o = run(&[
        "query-solve", "--game", p(&game), "--sigma", "0.5", "--epsilon", "0.3", "--delta", "0.1", "--c1", "0.001",
        "--c2", "0.02", "--seed", "11", "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out);
    assert_eq!(r["query_count"], r["extra"]["closed_form_query_count"]);
    assert!(r["query_count"].as_u64().unwrap() > 0);
}

#[test]
fn gmp_lemke_verify_checks_marginals() {
    let dir = tempfile::tempdir().unwrap();
    let game = make(dir.path(), "gmp.json", &["gmp", "--K", "4", "--seed", "1"]);
    let meta = &json(&game)["metadata"];
    assert_eq!(meta["gmp"]["k"], 4);
    assert_eq!(meta["scale"]["scale"], 257.0);
    let sigma = "0.16666666666666666";
    let solved = dir.path().join("s.json");
    let o = run(&[
        "solve-strong", "--game", p(&game), "--sigma", sigma, "--epsilon", "0.001", "--method", "lemke", "--out",
        p(&solved),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let checked = dir.path().join("v.json");
    let o = run(&[
        "verify", "--game", p(&game), "--profile", p(&solved), "--sigma", sigma, "--epsilon", "0.001", "--out",
        p(&checked),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let gmp = &json(&checked)["extra"]["gmp"];
    assert_eq!(gmp["qualifies"], true);
    assert_eq!(gmp["marginals"]["ok"], true);
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let game = make(dir.path(), "g.json", &["random", "--players", "2", "--actions", "6", "--seed", "4"]);
    let strip = |o: Output| {
        let mut v: Value = serde_json::from_slice(&o.stdout).unwrap();
        v["wall_time_ms"] = Value::Null;
        v
    };
    let args = [
        "query-solve", "--game", p(&game), "--sigma", "0.5", "--epsilon", "0.3", "--delta", "0.2", "--c1", "0.001",
        "--c2", "0.02",
    ];
    let a = strip(bin().args(args).env("SMOOTHNASH_SEED", "9").output().unwrap());
    let b = strip(run(&[&args[..], &["--seed", "9", "--threads", "2"]].concat()));
    assert_eq!(a, b);
    let weak = ["solve-weak", "--game", p(&game), "--sigma", "0.5", "--epsilon", "0.3", "--c1", "0.02"];
    assert_eq!(strip(run(&weak)), strip(run(&[&weak[..], &["--threads", "1"]].concat())));
}

#[test]
fn make_game_is_reproducible_from_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = make(dir.path(), "a.json", &["zerosum", "--actions", "5", "--seed", "3"]);
    let b = make(dir.path(), "b.json", &["zerosum", "--actions", "5", "--seed", "3"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(json(&a)["metadata"]["seed"], 3);
}

#[test]
fn zerosum_trace_has_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let game = make(dir.path(), "z.json", &["zerosum", "--actions", "6", "--seed", "2"]);
    let trace = dir.path().join("t.csv");
    let out = dir.path().join("r.json");
    let o = run(&[
        "solve-zerosum", "--game", p(&game), "--sigma", "0.25", "--epsilon", "0.5", "--alg", "pmwu", "--iterations",
        "64", "--trace", p(&trace), "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&trace).unwrap();
    let iters: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iters, ["1", "2", "4", "8", "16", "32", "64"]);
    let r = json(&out);
    let last: f64 = text.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(r["extra"]["duality_gap"].as_f64().unwrap(), last);
}

#[test]
fn padded_solution_unpads_to_a_solution() {
    let dir = tempfile::tempdir().unwrap();
    let game = make(dir.path(), "g.json", &["random", "--players", "2", "--actions", "3", "--seed", "6"]);
    let padded = make(dir.path(), "p.json", &["pad", "--game", p(&game), "--factor", "2"]);
    assert_eq!(json(&padded)["n"], 6);
    let solved = dir.path().join("s.json");
    let o = run(&[
        "solve-weak", "--game", p(&padded), "--sigma", "0.5", "--epsilon", "0.3", "--c1", "0.02", "--out",
        p(&solved),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&[
        "pad", "--game", p(&game), "--factor", "2", "--profile", p(&solved), "--sigma", "0.5", "--epsilon", "0.3",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["strategies"][0].as_array().unwrap().len(), 3);
}

#[test]
fn qre_converges_and_reports_residual() {
    let dir = tempfile::tempdir().unwrap();
    let game = make(dir.path(), "g.json", &["random", "--players", "2", "--actions", "4", "--seed", "1"]);
    let o = run(&["qre", "--game", p(&game), "--lambda", "2"]);
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["extra"]["residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn usage_and_input_errors_exit_one() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["solve-weak", "--sigma", "0.5"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"format_version\": 1,\n \"m\": 2 }").unwrap();
    let o = run(&["solve-weak", "--game", p(&bad), "--sigma", "0.5", "--epsilon", "0.3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.json"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
