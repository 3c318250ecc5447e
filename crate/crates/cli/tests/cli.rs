use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn schatten(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_schatten"))
        .args(args)
        .env_remove("CI")
        .env_remove("SCHATTEN_THREADS")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = schatten(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn f(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("missing {key} in {v}"))
}

#[test]
fn exact_hand_sums() {
    // 6 + 7 + ... + 105
    let v = ok_json(&["exact", "--matrix", "synth:linear:100", "--p", "1"]);
    assert!((f(&v, "value") - 5550.0).abs() < 1e-8);
    assert_eq!(v["n"], 100);
    assert_eq!(v["schema_version"], 1);
    // 20 * 100 + 80 * 1
    let v = ok_json(&["exact", "--matrix", "synth:clustered:100", "--p", "1"]);
    assert!((f(&v, "value") - 2080.0).abs() < 1e-8);
    let v = ok_json(&["exact", "--matrix", "identity:9", "--p", "2"]);
    assert!((f(&v, "value") - 3.0).abs() < 1e-14);
}

#[test]
fn exact_rejects_indefinite_with_numerical_code() {
    let out = schatten(&["exact", "--matrix", "diag:-1,2", "--p", "2"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("positive semi-definite"), "{}", stderr(&out));
}

#[test]
fn rademacher_identity_is_exact() {
    let v = ok_json(&[
        "estimate", "--matrix", "identity:16", "--p", "4", "--M", "13", "--dist", "rademacher", "--seed", "99",
    ]);
    assert!((f(&v, "value") - 2.0).abs() < 1e-14);
    assert_eq!(v["matvecs"], 26);
    for key in ["value", "p", "method", "M", "matvecs", "seed", "elapsed_s", "schema_version"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

fn without_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("elapsed_s");
    v
}

#[test]
fn repeated_runs_are_identical() {
    let args = [
        "estimate", "--matrix", "synth:exponential:40:3", "--p", "3", "--M", "100", "--seed", "17",
    ];
    assert_eq!(without_timing(ok_json(&args)), without_timing(ok_json(&args)));
    let mut one = args.to_vec();
    one.extend(["--threads", "1"]);
    let mut three = args.to_vec();
    three.extend(["--threads", "3"]);
    assert_eq!(without_timing(ok_json(&one)), without_timing(ok_json(&three)));
}

#[test]
fn non_integer_p_needs_cheby() {
    let out = schatten(&["estimate", "--matrix", "identity:4", "--p", "2.5", "--M", "10", "--seed", "1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("Chebyshev"));
}

#[test]
fn cheby_on_file_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fixture.mtx");
    let path_s = path.to_str().unwrap();
    ok_json(&[
        "generate", "--family", "exponential", "--n", "60", "--seed", "4", "--out", path_s,
    ]);
    let src = format!("mm:{path_s}");
    let exact = f(&ok_json(&["exact", "--matrix", &src, "--p", "80"]), "value");
    let est = ok_json(&[
        "estimate", "--matrix", &src, "--p", "80", "--M", "400", "--method", "cheby", "--N", "10", "--seed", "2",
    ]);
    assert_eq!(est["matvecs"], 4000);
    assert_eq!(est["N"], 10);
    let rel = (f(&est, "value") - exact).abs() / exact;
    assert!(rel < 0.05, "relative error {rel}");
}

#[test]
fn cheby_warns_when_not_cost_effective() {
    let out = schatten(&[
        "estimate", "--matrix", "synth:linear:20", "--p", "4", "--M", "5", "--method", "cheby", "--N", "2", "--seed",
        "1",
    ]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("warning"));
}

#[test]
fn bounds_examples() {
    let v = ok_json(&["bounds", "--epsilon", "1", "--delta", "0.7357588823", "--variant", "mc"]);
    assert_eq!(v["M"], 8);
    let v = ok_json(&["bounds", "--epsilon", "0.5", "--delta", "0.01", "--variant", "cheby"]);
    assert_eq!(v["M"], 1526);
    let v = ok_json(&["bounds", "--epsilon", "0.1", "--p", "10", "--kappa", "1.41421356"]);
    assert_eq!(v["N"], 8);
    for bad in [
        vec!["bounds", "--epsilon", "0", "--delta", "0.1"],
        vec!["bounds", "--epsilon", "0.1", "--delta", "1.5"],
        vec!["bounds", "--epsilon", "0.1"],
        vec!["bounds", "--epsilon", "0.1", "--p", "3"],
    ] {
        assert_eq!(code(&schatten(&bad)), 1, "{bad:?}");
    }
}

fn write_plan(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_column(text: &str, col: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == col).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn identity_experiment_has_zero_errors() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(
        dir.path(),
        "id.json",
        r#"{"matrix": {"kind": "identity", "n": 10}, "p": 3, "method": "mc",
            "M_grid": [1, 10], "realizations": 5, "distribution": "rademacher"}"#,
    );
    let out = schatten(&["experiment", "--plan", &plan]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    for col in ["mean_rel_err", "q025", "q975"] {
        assert!(csv_column(&text, col).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn linear_experiment_error_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let json = dir.path().join("out.json");
    let plan = write_plan(
        dir.path(),
        "lin.json",
        r#"{"matrix": {"kind": "synthetic", "family": "linear", "n": 100}, "p": 5, "method": "mc",
            "M_grid": [10, 100, 1000], "realizations": 100, "seed": 3}"#,
    );
    let out = schatten(&[
        "experiment", "--plan", &plan, "--csv", csv.to_str().unwrap(), "--json", json.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let means = csv_column(&std::fs::read_to_string(&csv).unwrap(), "mean_rel_err");
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
    let env: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(env["schema_version"], 1);
    assert_eq!(env["cells"].as_array().unwrap().len(), 3);
}

#[test]
fn malformed_plans_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let dup = write_plan(
        dir.path(),
        "dup.json",
        r#"{"matrix": {"kind": "identity", "n": 4}, "p": 2, "method": "mc", "M_grid": [10, 10]}"#,
    );
    let out = schatten(&["experiment", "--plan", &dup]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("strictly increasing"));
    let broken = write_plan(dir.path(), "broken.json", "{ not json");
    assert_eq!(code(&schatten(&["experiment", "--plan", &broken])), 1);
    assert_eq!(code(&schatten(&["experiment", "--plan", "/nonexistent/plan.json"])), 1);
}

#[test]
fn oed_small_grid_matches_dense_oracle() {
    let v = ok_json(&["oed", "--nx", "30", "--p", "2", "--M", "100000", "--seed", "8", "--exact"]);
    assert!(f(&v, "rel_err") < 0.02, "{v}");
    assert_eq!(v["n"], 30);
}

#[test]
fn oed_cg_and_lowrank_agree() {
    let base = ["oed", "--nx", "30", "--p", "3", "--M", "200", "--seed", "8"];
    let mut cg = base.to_vec();
    cg.extend(["--solver", "cg"]);
    let a = f(&ok_json(&base), "value");
    let b = f(&ok_json(&cg), "value");
    assert!((a - b).abs() <= 1e-7 * a, "{a} vs {b}");
}

#[test]
fn oed_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("post.mtx");
    let v = ok_json(&[
        "oed", "--nx", "20", "--p", "2", "--M", "10", "--seed", "1", "--exact", "--export", path.to_str().unwrap(),
    ]);
    let exact = f(&v, "exact");
    let src = format!("mm:{}", path.to_str().unwrap());
    let again = f(&ok_json(&["exact", "--matrix", &src, "--p", "2"]), "value");
    assert!((exact - again).abs() <= 1e-10 * exact);
}

#[test]
fn oed_misaligned_time_step() {
    let out = schatten(&["oed", "--nt", "10", "--p", "1", "--M", "10", "--seed", "1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("time step"));
}

#[test]
fn seed_policy() {
    let out = Command::new(env!("CARGO_BIN_EXE_schatten"))
        .args(["estimate", "--matrix", "identity:3", "--p", "1", "--M", "2"])
        .env("CI", "true")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--seed"));

    let out = schatten(&["estimate", "--matrix", "identity:3", "--p", "1", "--M", "2"]);
    assert!(out.status.success());
    let echoed: u64 = stderr(&out).trim().strip_prefix("seed: ").unwrap().parse().unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"].as_u64().unwrap(), echoed);
}

#[test]
fn thread_env_fallback_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_schatten"))
        .args(["bounds", "--epsilon", "1", "--delta", "0.5"])
        .env("SCHATTEN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn coeffs_and_generate() {
    let v = ok_json(&["coeffs", "--q", "2", "--interval", "1,3", "--N", "2"]);
    // x^2 on [1,3] with t = x - 2: 4.5 + 4 T1 + 0.5 T2
    let c: Vec<f64> = v["coeffs"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    for (got, want) in c.iter().zip([4.5, 4.0, 0.5]) {
        assert!((got - want).abs() < 1e-12, "{c:?}");
    }
    assert_eq!(code(&schatten(&["coeffs", "--q", "2", "--interval", "3,1", "--N", "2"])), 1);
    assert_eq!(code(&schatten(&["generate", "--family", "clustered", "--n", "3", "--out", "/tmp/x.mtx"])), 1);
}

#[test]
fn parse_errors_and_help() {
    assert_eq!(code(&schatten(&["estimate", "--matrix", "identity:3"])), 1);
    assert_eq!(code(&schatten(&["exact", "--matrix", "nope:1", "--p", "1"])), 1);
    assert_eq!(code(&schatten(&["--help"])), 0);
}
