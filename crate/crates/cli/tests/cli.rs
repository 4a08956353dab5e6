use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rendezvous(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rendezvous"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(rendezvous(&["--help"]).status.code(), Some(0));
    assert_eq!(rendezvous(&["run"]).status.code(), Some(1));
    assert_eq!(rendezvous(&["run", "--mission", "atv", "--mode", "l3"]).status.code(), Some(1));
    let out = rendezvous(&["run", "--mission", "leo"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown mission preset"));
}

#[test]
fn atv_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = rendezvous(&["run", "--mission", "atv", "--verify", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trajectory.csv", "control.csv", "summary.json", "convergence.log"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let s = summary(dir.path());
    for key in ["mission", "mode", "N", "norm_l1", "norm_l21", "residual", "iterations", "status", "eps_final", "impulses", "solver_config"] {
        assert!(s.get(key).is_some(), "summary lacks {key}");
    }
    assert_eq!(s["mission"], "atv");
    assert_eq!(s["N"], 50);
    assert_eq!(s["status"], "converged");
    assert_eq!(s["verification"]["certificate_accepted"], true);
    let imp = s["impulses"].as_array().unwrap();
    assert_eq!(imp[0]["k"], 0);
    assert_eq!(imp[0]["dv"].as_array().unwrap().len(), 3);

    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = traj.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,nu_rad,x_m,y_m,z_m,xdot_mps,ydot_mps,zdot_mps,xt,yt,zt,xt_p,yt_p,zt_p"
    );
    assert_eq!(traj.lines().count(), 52);
    // final row lands on the target state
    let last: Vec<f64> = traj.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[2] + 100.0).abs() < 1e-6);
    assert!(last[3..8].iter().all(|v| v.abs() < 1e-6), "{last:?}");

    let ctrl = fs::read_to_string(dir.path().join("control.csv")).unwrap();
    assert_eq!(ctrl.lines().next().unwrap(), "k,nu_rad,ux,uy,uz,stage_norm2,stage_norm1");
    assert_eq!(ctrl.lines().count(), 51);
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = rendezvous(&["run", "--mission", "atv", "--N", "30", "--out", d.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["trajectory.csv", "control.csv", "summary.json", "convergence.log"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn exhausted_iterations_exit_with_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = rendezvous(&["run", "--mission", "atv", "--jmax", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let s = summary(dir.path());
    assert_eq!(s["status"], "max-iterations");
    assert_eq!(s["iterations"], 3);
}

#[test]
fn kilometre_config_matches_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("atv_km.json");
    fs::write(
        &cfg,
        r#"{
  "name": "atv-km",
  "units": {"length": "km", "velocity": "km/s"},
  "orbit": {"a": 6763, "e": 0.0052},
  "nu0": 0.0, "nuf": 8.1831, "N": 50,
  "x0": [-30, 0, 0.5, 0.008514, 0, 0],
  "xf": [-0.1, 0, 0, 0, 0, 0]
}"#,
    )
    .unwrap();
    let km = dir.path().join("km");
    let m = dir.path().join("m");
    let out = rendezvous(&["run", "--mission", cfg.to_str().unwrap(), "--out", km.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rendezvous(&["run", "--mission", "atv", "--out", m.to_str().unwrap()]).status.code(), Some(0));
    let (a, b) = (summary(&km), summary(&m));
    for key in ["norm_l1", "norm_l21"] {
        let (x, y) = (a[key].as_f64().unwrap(), b[key].as_f64().unwrap());
        assert!((x - y).abs() <= 1e-9 * y, "{key}: {x} vs {y}");
    }
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"units": {"length": "m", "velocity": "m/s"}, "orbit": {"a": 7e6, "e": 0.1},
            "nu0": 2.0, "nuf": 1.0, "N": 10, "x0": [0,0,0,0,0,0], "xf": [1,0,0,0,0,0]}"#,
    )
    .unwrap();
    let out = rendezvous(&["run", "--mission", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nuf"));

    fs::write(&cfg, "{\n  \"units\": oops\n}").unwrap();
    let out = rendezvous(&["run", "--mission", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn verify_subcommand_passes_small_suite() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("suite.json");
    let out = rendezvous(&["verify", "--instances", "20", "--seed", "3", "--report", rep.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let v: Value = serde_json::from_str(&fs::read_to_string(rep).unwrap()).unwrap();
    assert_eq!(v["outcomes"].as_array().unwrap().len(), 20);
}
