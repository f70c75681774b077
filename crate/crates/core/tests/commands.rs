use std::process::Command;

use ks_dirichlet::cli::{parse_initial, simulate, RunConfig};
use ks_dirichlet::grid::make_grid;
use ks_dirichlet::newton::{newton_solve, Constraint, ContinuationPoint, NewtonSettings};
use ks_dirichlet::stepper::SpaceTimeTrace;

fn ksdir() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ksdir"))
}

#[test]
fn simulate_exit_codes_and_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"u0": "zero", "t_final": 0.01}"#).unwrap();
    let out = dir.path().join("out");
    let run = |force: bool| {
        let mut c = ksdir();
        c.args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&out).args(["--nu", "0.2"]);
        if force {
            c.arg("--force");
        }
        c.output().unwrap()
    };
    assert_eq!(run(false).status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("spacetime.csv")).unwrap();
    let trace = SpaceTimeTrace::read_csv(&text).unwrap();
    assert!(trace.rows.iter().all(|(_, u)| u.iter().all(|v| *v == 0.0)));
    assert_eq!(run(false).status.code(), Some(2));
    assert_eq!(run(true).status.code(), Some(0));
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let st = ksdir().args(["verify", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let st = ksdir().args(["simulate", "--N", "7"]).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn rerun_reproduces_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { output_dir: dir.path().into(), nu: 0.3, t_final: 0.5, ..Default::default() };
    simulate(&cfg, false).unwrap();
    let a = std::fs::read(dir.path().join("spacetime.csv")).unwrap();
    simulate(&cfg, true).unwrap();
    let b = std::fs::read(dir.path().join("spacetime.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn decay_above_first_critical_viscosity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { output_dir: dir.path().into(), nu: 0.5, t_final: 50.0, snapshot_every: 1000, ..Default::default() };
    let out = simulate(&cfg, false).unwrap();
    assert!(out.final_norm < 1e-12, "{}", out.final_norm);
}

#[test]
fn saturation_on_the_first_branch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { output_dir: dir.path().into(), nu: 0.38, t_final: 200.0, snapshot_every: 10000, ..Default::default() };
    let out = simulate(&cfg, false).unwrap();
    let text = std::fs::read_to_string(&out.path).unwrap();
    let trace = SpaceTimeTrace::read_csv(&text).unwrap();
    let g = make_grid(32).unwrap();
    let last = ks_dirichlet::grid::Field::new(g.clone(), trace.rows.last().unwrap().1.clone()).unwrap();
    assert!(out.final_norm > 1.0);
    // the end state is a steady solution
    let p = ContinuationPoint::equilibrium(last.clone(), 0.38, 1.0);
    let s = newton_solve(&p, &NewtonSettings::default(), 1e-3, Constraint::None).unwrap();
    let d = s.point.u.axpy(-1.0, &last).unwrap().norm2();
    assert!(d < 1e-6, "{d}");
    assert!(parse_initial("kernel:1:even:0.1", &g).unwrap().norm2() < out.final_norm);
}
