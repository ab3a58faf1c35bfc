//! End-to-end runs through the configuration layer.

use std::path::Path;

use taskstack::config::ScenarioConfig;
use taskstack::scenarios;
use taskstack::sim::{phase_report, read_trace_csv, run, write_trace_csv, PhaseThresholds};
use taskstack::stack::build_k;
use taskstack::valuefn::write_grid;

#[test]
fn hexagon_schedule_meets_every_phase() {
    let sc = scenarios::builtin("multirobot_hex")
        .unwrap()
        .build(Path::new("."))
        .unwrap();
    let trace = run(&sc).unwrap();
    assert!(trace.is_complete() && trace.all_optimal());
    assert_eq!(trace.records.len(), 4501);
    let rep = phase_report(
        &trace,
        &sc.schedule,
        &PhaseThresholds::default(),
        &scenarios::multirobot_hex_expectations(),
    );
    assert!(rep.all_satisfied(), "{rep:#?}");
}

#[test]
fn trace_csv_round_trips() {
    let sc = scenarios::builtin("nullspace_two_task")
        .unwrap()
        .build(Path::new("."))
        .unwrap();
    let trace = run(&sc).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&trace, &mut buf).unwrap();
    let back = read_trace_csv(buf.as_slice()).unwrap();
    assert_eq!(back.records.len(), trace.records.len());
    for (a, b) in trace.records.iter().zip(&back.records) {
        assert_eq!(a.t, b.t);
        assert_eq!(a.x, b.x);
        assert_eq!(a.u, b.u);
        assert_eq!(a.values, b.values);
        assert_eq!(a.delta, b.delta);
    }
}

#[test]
fn two_task_equilibrium_sits_where_the_priority_row_binds() {
    let sc = scenarios::builtin("nullspace_two_task")
        .unwrap()
        .build(Path::new("."))
        .unwrap();
    let trace = run(&sc).unwrap();
    let l = sc.schedule.segments()[0].relations[0].scale;
    // unit weights and goals 4 apart: the stack settles on the segment
    // between the goals where d² = l (4 - d)²
    let d = 4.0 * l.sqrt() / (1.0 + l.sqrt());
    let last = trace.records.last().unwrap();
    assert!((last.x[0] - d).abs() < 1e-6 && last.x[1].abs() < 1e-6, "{:?}", last.x);
    assert!((last.values[0] - l * last.values[1]).abs() < 1e-9);
    let k = build_k(&sc.schedule.segments()[0].relations, &sc.task_ids()).unwrap();
    assert!((k.matrix() * &last.values).amax() < 1e-9);
}

#[test]
fn learned_artifact_drives_a_configured_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = scenarios::builtin("double_integrator").unwrap();
    let learning = cfg.learning.clone().unwrap().with_resolution(vec![21, 21]);
    let (grid, report) = learning.learn(&cfg.system().unwrap()).unwrap();
    assert!(report.monotone && report.residual <= learning.tol);
    let artifact = dir.path().join(cfg.output.artifact.as_deref().unwrap());
    write_grid(&grid, std::fs::File::create(&artifact).unwrap()).unwrap();

    // without the learning section the artifact is the only source
    cfg.learning = None;
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    let loaded = ScenarioConfig::load(&path).unwrap();
    let sc = loaded.build(dir.path()).unwrap();
    let trace = run(&sc).unwrap();
    assert!(trace.is_complete());
    let first = trace.records.first().unwrap().values[0];
    let last = trace.records.last().unwrap().values[0];
    assert!(last < 0.05 * first, "{first} -> {last}");
}

#[test]
fn halving_the_step_keeps_final_values() {
    let base = scenarios::builtin("multirobot_hex")
        .unwrap()
        .build(Path::new("."))
        .unwrap();
    let mut fine = base.clone();
    fine.dt = base.dt / 2.0;
    let coarse = run(&base).unwrap();
    let refined = run(&fine).unwrap();
    assert!(refined.all_optimal());
    let (a, b) = (
        &coarse.records.last().unwrap().values,
        &refined.records.last().unwrap().values,
    );
    for i in 0..a.len() {
        assert!(
            (a[i] - b[i]).abs() <= 0.02 * a[i].abs(),
            "task {i}: {} vs {}",
            a[i],
            b[i]
        );
    }
    assert!(coarse.median_solve_time() < 1e-3, "{}", coarse.median_solve_time());
}
