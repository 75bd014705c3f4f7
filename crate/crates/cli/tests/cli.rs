//! End-to-end runs of the `conjlab` binary and its exit-code contract.

use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
    report: Option<Value>,
}

fn conjlab(dir: &Path, command: &str, config: &str, extra: &[&str]) -> Run {
    let cfg = dir.join(format!("{command}.json"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("{command}-out"));
    let _ = fs::remove_dir_all(&out);
    let o = Command::new(env!("CARGO_BIN_EXE_conjlab"))
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .env("CONJLAB_THREADS", "2")
        .output()
        .unwrap();
    let report = fs::read_to_string(out.join("report.json"))
        .ok()
        .map(|t| serde_json::from_str(&t).unwrap());
    Run {
        code: o.status.code().unwrap(),
        stdout: String::from_utf8_lossy(&o.stdout).into(),
        stderr: String::from_utf8_lossy(&o.stderr).into(),
        report,
    }
}

fn num(v: &Value, path: &[&str]) -> f64 {
    path.iter()
        .fold(v, |v, k| match k.parse::<usize>() {
            Ok(i) => &v[i],
            Err(_) => &v[k],
        })
        .as_f64()
        .unwrap_or_else(|| panic!("{path:?} in {v}"))
}

const PLANAR: &str = r#"{"system": {"type": "planar", "sigma": 0.1}}"#;

#[test]
fn hypotheses_pass_for_small_sigma() {
    let d = TempDir::new().unwrap();
    let r = conjlab(d.path(), "hypotheses", PLANAR, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.report.unwrap();
    assert!((num(&rep, &["result", "hypotheses", "theta"]) - 0.2).abs() < 1e-12);
    assert_eq!(rep["status"], "pass");
    // defaults are echoed
    assert_eq!(rep["config"]["system"]["realization"], "tanh");
    assert_eq!(num(&rep, &["config", "dichotomy", "given", "k"]), 1.0);
    assert!(num(&rep, &["config", "settings", "horizon"]) > 0.0);
    assert_eq!(num(&rep, &["config", "verify", "budget"]), 5e-3);
}

#[test]
fn hypotheses_fail_for_large_sigma() {
    let d = TempDir::new().unwrap();
    let r = conjlab(
        d.path(),
        "hypotheses",
        r#"{"system": {"type": "planar", "sigma": 0.6}}"#,
        &[],
    );
    assert_eq!(r.code, 3);
    let rep = r.report.unwrap();
    assert!((num(&rep, &["result", "hypotheses", "theta"]) - 1.2).abs() < 1e-12);
    assert_eq!(rep["result"]["hypotheses"]["theta_ok"], false);
}

#[test]
fn config_errors_exit_two() {
    let d = TempDir::new().unwrap();
    let custom = r#"{"system": {"type": "custom", "matrix": {"constant": [[-1, 0], [0, 1]]},
        "field": {"zero": {"dim": 2}}}}"#;
    let r = conjlab(d.path(), "hypotheses", custom, &[]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("dichotomy"), "{}", r.stderr);
    assert!(r.report.is_none());
    for bad in [
        "{not json",
        r#"{"system": {"type": "planar", "sigma": 0.1}, "extra": 1}"#,
        r#"{"system": {"type": "planet", "sigma": 0.1}}"#,
        r#"{"system": {"type": "planar", "sigma": -1}}"#,
        r#"{"settings": {"picard_tol": 1e-6}}"#,
    ] {
        assert_eq!(conjlab(d.path(), "hypotheses", bad, &[]).code, 2, "{bad}");
    }
    let missing = Command::new(env!("CARGO_BIN_EXE_conjlab"))
        .args(["verify", "--config", "/nonexistent/conjlab.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("c.json");
    fs::write(&cfg, PLANAR).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_conjlab"))
        .args(["hypotheses", "--config"])
        .arg(&cfg)
        .env("CONJLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_planar_within_default_budget() {
    let d = TempDir::new().unwrap();
    let r = conjlab(d.path(), "verify", PLANAR, &[]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    let rep = r.report.unwrap();
    let c = &rep["result"]["conjugacy"];
    assert!(num(c, &["max_hg_residual"]) <= 5e-3);
    assert!(num(c, &["max_h_offset"]) <= 0.2 * 2f64.sqrt() + 1e-3);
    assert!(num(c, &["max_picard_ratio"]) <= 0.25);
    let csv = fs::read_to_string(d.path().join("verify-out/map_samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    assert!(csv.starts_with("t,x_0,x_1,h_0,h_1,g_0,g_1,"));
    let traj = fs::read_to_string(d.path().join("verify-out/trajectory_samples.csv")).unwrap();
    assert_eq!(traj.lines().count(), 1 + 20 * 6);
}

#[test]
fn verify_with_tight_budget_is_a_violation() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"system": {"type": "planar", "sigma": 0.1},
        "verify": {"budget": 1e-12, "sample": {"points": 10, "trajectories": 2}}}"#;
    let r = conjlab(d.path(), "verify", cfg, &[]);
    assert_eq!(r.code, 1);
    assert_eq!(r.report.unwrap()["status"], "verification_violation");
}

#[test]
fn verify_zero_field_has_zero_residuals() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"system": {"type": "custom", "matrix": {"constant": [[-1, 0], [0, 1]]},
        "field": {"zero": {"dim": 2}}},
        "dichotomy": {"given": {"p0": [[1, 0], [0, 0]], "k": 1, "alpha": 1, "alpha1": 0.5}},
        "verify": {"sample": {"points": 10, "trajectories": 3}}}"#;
    let r = conjlab(d.path(), "verify", cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.report.unwrap();
    let c = &rep["result"]["conjugacy"];
    for key in [
        "max_hg_residual",
        "max_gh_residual",
        "max_h_mapping_residual",
        "max_g_mapping_residual",
    ] {
        assert_eq!(num(c, &[key]), 0.0, "{key}");
    }
    assert_eq!(num(&rep, &["config", "system", "window", "start"]), -20.0);
}

#[test]
fn verify_refuses_when_hypotheses_fail() {
    let d = TempDir::new().unwrap();
    let r = conjlab(
        d.path(),
        "verify",
        r#"{"system": {"type": "planar", "sigma": 0.6}}"#,
        &[],
    );
    assert_eq!(r.code, 3);
}

#[test]
fn seeds_make_reports_reproducible() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"system": {"type": "planar", "sigma": 0.1},
        "verify": {"sample": {"points": 8, "trajectories": 2}}}"#;
    let a = conjlab(d.path(), "verify", cfg, &["--seed", "11"]);
    let a_csv = fs::read_to_string(d.path().join("verify-out/map_samples.csv")).unwrap();
    let b = conjlab(d.path(), "verify", cfg, &["--seed", "11"]);
    let b_csv = fs::read_to_string(d.path().join("verify-out/map_samples.csv")).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a_csv, b_csv);
    assert_eq!(
        num(a.report.as_ref().unwrap(), &["config", "verify", "sample", "seed"]),
        11.0
    );
    let c = conjlab(d.path(), "verify", cfg, &["--seed", "12"]);
    assert_ne!(a.report.unwrap()["result"], c.report.unwrap()["result"]);
}

#[test]
fn regularity_of_g1_has_exponent_one_minus_eps() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"system": {"type": "unit_ball", "eps": 0.25},
        "regularity": {"target": "g1", "mode": "origin_anchored", "estimators": "holder",
                       "pairs_per_scale": 20, "exponent_range": [0.73, 0.77]}}"#;
    let r = conjlab(d.path(), "regularity", cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.report.unwrap();
    assert!((num(&rep, &["result", "holder", "exponent"]) - 0.75).abs() <= 0.02);
    assert_eq!(num(&rep, &["config", "regularity", "upper", "0"]), 0.75);
    let csv = fs::read_to_string(d.path().join("regularity-out/holder.csv")).unwrap();
    assert!(csv.starts_with("scale,max_increment,max_ratio,pairs\n"));
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn regularity_of_h1_is_lipschitz_one() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"system": {"type": "unit_ball", "eps": 0.25},
        "regularity": {"target": "h1", "estimators": "lipschitz", "pairs_per_scale": 400,
                       "max_lipschitz": 1.001}}"#;
    let r = conjlab(d.path(), "regularity", cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(num(&r.report.unwrap(), &["result", "lipschitz", "constant"]) <= 1.0 + 1e-3);
}

#[test]
fn regularity_expectation_failure_is_a_violation() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"system": {"type": "unit_ball", "eps": 0.25},
        "regularity": {"target": "g1", "mode": "origin_anchored", "estimators": "holder",
                       "exponent_range": [0.95, 1.05]}}"#;
    assert_eq!(conjlab(d.path(), "regularity", cfg, &[]).code, 1);
}

#[test]
fn regularity_flat_map_warns_and_passes() {
    let d = TempDir::new().unwrap();
    let r = conjlab(d.path(), "regularity", r#"{"regularity": {"target": "constant"}}"#, &[]);
    assert_eq!(r.code, 0);
    assert!(r.stderr.contains("flat"), "{}", r.stderr);
    let rep = r.report.unwrap();
    assert_eq!(rep["result"]["flat_map"], true);
    assert_eq!(rep["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn regularity_reports_theoretical_constants() {
    let d = TempDir::new().unwrap();
    let cfg = r#"{"system": {"type": "planar", "sigma": 0.1},
        "regularity": {"target": "h", "scale_min": 1e-3, "scale_max": 0.5, "scales": 5, "pairs_per_scale": 4}}"#;
    let r = conjlab(d.path(), "regularity", cfg, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = r.report.unwrap();
    let th = &rep["result"]["theory"];
    // K θ̃ = 0.4, so p = (1 - 0.4 + 0.8) / 0.6
    assert!((num(th, &["constants", "p"]) - 1.4 / 0.6).abs() < 1e-12);
    // α = M here, so the λ condition cannot hold
    assert_eq!(th["constants"]["lambda_feasible"], false);
    let lip = num(&rep, &["result", "lipschitz", "constant"]);
    assert!(lip <= 1.4 / 0.6 * 1.1, "{lip}");
}

#[test]
fn gronwall_random_suite_passes() {
    let d = TempDir::new().unwrap();
    let r = conjlab(d.path(), "gronwall", "{}", &["--seed", "1"]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    let rep = r.report.unwrap();
    assert_eq!(num(&rep, &["result", "instances"]), 50.0);
    assert!(num(&rep, &["result", "smallest_margin"]) >= -1e-6);
    assert!(num(&rep, &["result", "max_scaling_error"]) <= 1e-10);
    let csv = fs::read_to_string(d.path().join("gronwall-out/certificates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
}

fn instance(b: &str) -> String {
    format!(
        r#"{{"gronwall": {{"count": 0, "instances": [{{"t0": 0, "s": 5, "c": 1, "c1": 1, "c2": 1,
            "alpha": 1, "alpha1": 0.5, "b": {b}}}]}}}}"#
    )
}

#[test]
fn gronwall_contraction_violation_exits_three() {
    let d = TempDir::new().unwrap();
    let r = conjlab(d.path(), "gronwall", &instance(r#"{"constant": 2.0}"#), &[]);
    assert_eq!(r.code, 3);
    let rep = r.report.unwrap();
    assert_eq!(rep["result"]["certificates"][0]["status"], "contraction_violated");
    assert!(num(&rep, &["result", "certificates", "0", "theta1"]) >= 1.0);
}

#[test]
fn gronwall_zero_modulus_passes() {
    let d = TempDir::new().unwrap();
    let r = conjlab(d.path(), "gronwall", &instance(r#"{"constant": 0.0}"#), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn example_self_tests_pass() {
    let d = TempDir::new().unwrap();
    for system in [
        r#"{"type": "unit_ball", "eps": 0.25}"#,
        r#"{"type": "scalar_time", "eps": 0.1, "delta": 0.5}"#,
        r#"{"type": "sawtooth", "c": 1}"#,
        r#"{"type": "planar", "sigma": 0.1, "realization": "sine"}"#,
    ] {
        let r = conjlab(d.path(), "example", &format!(r#"{{"system": {system}}}"#), &[]);
        assert_eq!(r.code, 0, "{system}: {}", r.stdout);
        let rep = r.report.unwrap();
        for c in rep["result"]["oracles"]["checks"].as_array().unwrap() {
            assert_eq!(c["passed"], true, "{c}");
        }
    }
}

#[test]
fn scalar_time_pushed_curve_residual_is_zero() {
    let d = TempDir::new().unwrap();
    let r = conjlab(
        d.path(),
        "example",
        r#"{"system": {"type": "scalar_time", "eps": 0.1, "delta": 0.5}}"#,
        &[],
    );
    let rep = r.report.unwrap();
    let checks = rep["result"]["oracles"]["checks"].as_array().unwrap();
    let pushed = checks
        .iter()
        .find(|c| c["name"].as_str().unwrap().contains("pushed"))
        .expect("pushed-curve check");
    assert!(num(pushed, &["value"]) <= 1e-10);
}

#[test]
fn report_goes_to_stdout_without_out_dir() {
    let d = TempDir::new().unwrap();
    let cfg = d.path().join("c.json");
    fs::write(&cfg, PLANAR).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_conjlab"))
        .args(["hypotheses", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let rep: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep["command"], "hypotheses");
    assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
}
