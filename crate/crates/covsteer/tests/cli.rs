use std::path::{Path, PathBuf};
use std::process::Command;

use covsteer::files::{read_moments, read_policy, write_moments, write_policy};
use covsteer::pipeline::{run_solve, sample_paths_parallel};
use covsteer::RunConfig;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_covsteer"))
}

fn lti_config() -> Value {
    json!({
        "model": {
            "name": "lti",
            "a": [[0.0, 1.0], [-1.0, -0.2]],
            "b": [[0.0], [1.0]],
            "q": [[1.0, 0.0], [0.0, 0.5]]
        },
        "horizon": 2.0,
        "n_steps": 200,
        "eps": 0.2,
        "initial": { "mean": [1.0, 0.0], "cov": [[0.05, 0.0], [0.0, 0.05]] },
        "terminal": { "mean": [-1.0, 0.5], "cov": [[0.1, 0.02], [0.02, 0.08]] },
        "simulate": { "n_paths": 300, "seed": 4, "keep_paths": 3 }
    })
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_and_simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &lti_config());
    let out = dir.path().join("run");
    let (code, err) = run(&["solve", s(&config), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], json!(true));
    let (code, err) = run(&["simulate", s(&config), "--policy-dir", s(&out), "--out", s(&out)]);
    assert_eq!(code, 0, "{err}");
    let ens: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("ensemble.json")).unwrap()).unwrap();
    assert_eq!(ens["n_paths"], json!(300));
    assert_eq!(ens["verdict"]["pass"], json!(true));
    let csv = std::fs::read_to_string(out.join("ensemble.csv")).unwrap();
    assert!(csv.starts_with("series,t,x_0,x_1,S_0_0,S_0_1,S_1_0,S_1_1\n"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("path_2,")).count(), 201);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &lti_config());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(run(&["solve", s(&config), "--out", s(d)]).0, 0);
    }
    for f in ["policy.csv", "moments.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (w1, w3) = (dir.path().join("w1"), dir.path().join("w3"));
    assert_eq!(run(&["simulate", s(&config), "--policy-dir", s(&a), "--out", s(&w1)]).0, 0);
    assert_eq!(
        run(&["simulate", s(&config), "--policy-dir", s(&a), "--out", s(&w3), "--workers", "3"]).0,
        0
    );
    for f in ["ensemble.json", "ensemble.csv"] {
        assert_eq!(std::fs::read(w1.join(f)).unwrap(), std::fs::read(w3.join(f)).unwrap(), "{f}");
    }
    let other = dir.path().join("seed");
    run(&["simulate", s(&config), "--policy-dir", s(&a), "--out", s(&other), "--seed", "5"]);
    assert_ne!(
        std::fs::read(w1.join("ensemble.csv")).unwrap(),
        std::fs::read(other.join("ensemble.csv")).unwrap()
    );
}

#[test]
fn policy_and_moments_round_trip_on_nodes() {
    let config: RunConfig = serde_json::from_value(lti_config()).unwrap();
    let setup = config.setup().unwrap();
    let solved = run_solve(&setup).unwrap().solution;
    let dir = tempfile::tempdir().unwrap();
    let (pp, mp) = (dir.path().join("policy.csv"), dir.path().join("moments.csv"));
    write_policy(&pp, &solved.policy).unwrap();
    write_moments(&mp, &solved.closed_loop).unwrap();
    let grid = setup.solver.grid;
    let policy = read_policy(&pp, &grid, 2, 1).unwrap();
    let moments = read_moments(&mp, &grid, 2).unwrap();
    for i in 0..grid.n_nodes() {
        assert_eq!(policy.gain.node(i), solved.policy.gain.node(i));
        assert_eq!(policy.feedforward.node(i), solved.policy.feedforward.node(i));
        assert_eq!(moments.mean.node(i), solved.closed_loop.mean.node(i));
        assert_eq!(moments.cov.node(i), solved.closed_loop.cov.node(i));
    }
}

#[test]
fn parallel_sampling_matches_serial() {
    let config: RunConfig = serde_json::from_value(lti_config()).unwrap();
    let setup = config.setup().unwrap();
    let sol = run_solve(&setup).unwrap().solution;
    let go = |w| {
        sample_paths_parallel(
            &setup.model,
            &sol.policy,
            &setup.initial,
            &sol.closed_loop,
            &setup.simulation,
            w,
        )
        .unwrap()
    };
    let serial = covsteer_core::simulate::sample_paths(
        &setup.model,
        &sol.policy,
        &setup.initial,
        &sol.closed_loop,
        &setup.simulation,
    )
    .unwrap();
    assert_eq!(go(1), serial);
    assert_eq!(go(4), serial);
}

#[test]
fn rejects_non_spd_covariance_naming_the_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = lti_config();
    cfg["initial"]["cov"] = json!([[0.05, 0.0], [0.0, -0.05]]);
    let config = write_config(dir.path(), &cfg);
    let (code, err) = run(&["check", s(&config)]);
    assert_eq!(code, 1);
    assert!(err.contains("initial.cov"), "{err}");
    let (code, _) = run(&["solve", s(&config), "--out", s(dir.path())]);
    assert_eq!(code, 1);
}

#[test]
fn rejects_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = lti_config();
    cfg["terminal"]["mean"] = json!([1.0, 2.0, 3.0]);
    let (code, err) = run(&["check", s(&write_config(dir.path(), &cfg))]);
    assert_eq!(code, 1);
    assert!(err.contains("terminal.mean"), "{err}");
    cfg = lti_config();
    cfg["horizon"] = json!(-1.0);
    let (code, err) = run(&["check", s(&write_config(dir.path(), &cfg))]);
    assert_eq!(code, 1);
    assert!(err.contains("horizon"), "{err}");
}

#[test]
fn tampered_policy_names_the_bad_row() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &lti_config());
    let out = dir.path().join("run");
    assert_eq!(run(&["solve", s(&config), "--out", s(&out)]).0, 0);
    let path = out.join("policy.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<&str> = lines[6].split(',').collect();
    fields[2] = "NaN";
    lines[6] = fields.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let (code, err) = run(&["simulate", s(&config), "--policy-dir", s(&out), "--out", s(&out)]);
    assert_eq!(code, 1);
    assert!(err.contains("line 7") && err.contains("K_0_1"), "{err}");
}

#[test]
fn grid_mismatch_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &lti_config());
    let out = dir.path().join("run");
    assert_eq!(run(&["solve", s(&config), "--out", s(&out)]).0, 0);
    let mut cfg = lti_config();
    cfg["n_steps"] = json!(100);
    let other = dir.path().join("other");
    std::fs::create_dir(&other).unwrap();
    let config = write_config(&other, &cfg);
    let (code, err) = run(&["simulate", s(&config), "--policy-dir", s(&out), "--out", s(&other)]);
    assert_eq!(code, 1);
    assert!(err.contains("nodes"), "{err}");
}

#[test]
fn two_path_ensemble_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = lti_config();
    cfg["simulate"]["n_paths"] = json!(2);
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    assert_eq!(run(&["solve", s(&config), "--out", s(&out)]).0, 0);
    let (code, err) = run(&["simulate", s(&config), "--policy-dir", s(&out), "--out", s(&out)]);
    assert!(code == 0 || code == 2, "{err}");
    let ens: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("ensemble.json")).unwrap()).unwrap();
    assert!(ens["cost_stderr"].as_f64().unwrap() > 0.0);
}

#[test]
fn not_converged_exits_two_and_still_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = json!({
        "model": { "name": "double_integrator", "drag_coefficient": 0.005 },
        "horizon": 5.0,
        "n_steps": 200,
        "eps": 0.1,
        "max_iters": 2,
        "initial": { "mean": [1.0, 8.0, 2.0, 0.0], "cov": [[0.01, 0.0, 0.0, 0.0], [0.0, 0.01, 0.0, 0.0], [0.0, 0.0, 0.01, 0.0], [0.0, 0.0, 0.0, 0.01]] },
        "terminal": { "mean": [1.0, 2.0, -1.0, 0.0], "cov": [[0.1, 0.0, 0.0, 0.0], [0.0, 0.1, 0.0, 0.0], [0.0, 0.0, 0.1, 0.0], [0.0, 0.0, 0.0, 0.1]] },
        "simulate": { "n_paths": 100, "seed": 1 }
    });
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    let (code, err) = run(&["solve", s(&config), "--out", s(&out)]);
    assert_eq!(code, 2, "{err}");
    for f in ["report.json", "policy.csv", "moments.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    cfg["bogus"] = json!(1);
    let (code, err) = run(&["check", s(&write_config(dir.path(), &cfg))]);
    assert_eq!(code, 1);
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn bundled_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["double_integrator.json", "manipulator.json"] {
        let (code, err) = run(&["check", s(&root.join(name))]);
        assert_eq!(code, 0, "{name}: {err}");
    }
}
