//! Cross-module consistency: the transient integrator, the direct steady
//! solver, the path oracle, and the pipeline must all tell the same story.

mod common;

use common::pwl_grid;
use discharge_core::experiment::{
    run_pipeline, ExperimentConfig, GroundedObjectConfig, VoltageSourceConfig,
};
use discharge_core::network::build_grid;
use discharge_core::path::min_threshold_path;
use discharge_core::steady::{solve_steady, SolverControls};
use discharge_core::transient::{integrate, InjectionProfile, IntegratorControls};
use discharge_core::LinkCharacteristic;

#[test]
fn transient_terminal_state_matches_direct_solve_on_six_by_six() {
    let (graph, _) = pwl_grid(6, 6, 0.7, 42, 1e-5, 800.0);
    let profile = InjectionProfile::new(1.0);
    let record = integrate(&graph, &profile, None, 1e8, &IntegratorControls::default()).unwrap();
    assert!(record.steady_reached);
    let steady = solve_steady(&graph, &profile, &SolverControls::default()).unwrap();
    let gap = (record.terminal_currents() - &steady.u_bar).amax();
    assert!(gap <= 1e-4, "per-link gap {gap:.3e}");
}

#[test]
fn mixed_characteristic_grid_agrees_across_solvers() {
    let (graph, thresholds) = pwl_grid(4, 4, 0.7, 9, 1e-5, 800.0);
    // replace a few laws to get a genuine mix
    let mut chars: Vec<LinkCharacteristic> = graph.characteristics().to_vec();
    chars[3] = LinkCharacteristic::linear(0.8);
    chars[10] = LinkCharacteristic::piecewise(thresholds[10], 1e-4, 400.0);
    let graph = graph.with_characteristics(chars).unwrap();
    let profile = InjectionProfile::new(1.0);
    let steady = solve_steady(&graph, &profile, &SolverControls::default()).unwrap();
    let record = integrate(&graph, &profile, None, 1e8, &IntegratorControls::default()).unwrap();
    assert!(record.steady_reached);
    let gap = (record.terminal_currents() - &steady.u_bar).amax();
    assert!(gap <= 1e-4, "per-link gap {gap:.3e}");
}

#[test]
fn final_branch_count_equals_oracle_path_length() {
    let (graph, thresholds) = pwl_grid(6, 6, 0.7, 42, 1e-5, 800.0);
    let path = min_threshold_path(&graph, &thresholds).unwrap();
    assert!(path.unique);
    let record = integrate(
        &graph,
        &InjectionProfile::new(1.0),
        None,
        1e8,
        &IntegratorControls::default(),
    )
    .unwrap();
    let counts = record.branch_activity(0.01);
    assert_eq!(*counts.last().unwrap(), path.links.len());
    let peak = counts.iter().copied().max().unwrap();
    assert!(peak > path.links.len(), "branching then depletion");
}

#[test]
fn lyapunov_decreases_against_the_true_steady_state() {
    let (graph, _) = pwl_grid(6, 6, 0.7, 42, 1e-5, 800.0);
    let profile = InjectionProfile::new(1.0);
    let steady = solve_steady(&graph, &profile, &SolverControls::default()).unwrap();
    let mut record =
        integrate(&graph, &profile, None, 1e8, &IntegratorControls::default()).unwrap();
    record.recompute_lyapunov(&graph, &steady.v_bar);
    assert!(
        record.max_lyapunov_increase() <= 1e-8,
        "worst increase {:.3e}",
        record.max_lyapunov_increase()
    );
    // the stored energy must start positive and end at solver noise
    assert!(record.lyapunov[0] > 0.0);
    assert!(*record.lyapunov.last().unwrap() < 1e-10);
}

#[test]
fn doubling_capacitance_rescales_time() {
    let (graph, _) = pwl_grid(3, 3, 0.7, 4, 1e-5, 800.0);
    let doubled = graph.with_scaled_capacitances(2.0).unwrap();
    let profile = InjectionProfile::new(1.0);
    let controls = IntegratorControls {
        abs_tol: 1e-11,
        rel_tol: 1e-9,
        steady_dwell: 0,
        ..Default::default()
    };
    // stop mid-transient so the comparison probes the dynamics, not the
    // shared attractor
    let t_probe = 1.5;
    let a = integrate(&graph, &profile, None, t_probe, &controls).unwrap();
    let b = integrate(&doubled, &profile, None, 2.0 * t_probe, &controls).unwrap();
    let gap = (&a.terminal_state().voltages - &b.terminal_state().voltages).amax();
    assert!(gap <= 1e-6, "time-scaling gap {gap:.3e}");
}

#[test]
fn pipeline_outputs_are_byte_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let base = ExperimentConfig {
        rows: 4,
        cols: 4,
        seed: 8,
        ..Default::default()
    };
    let mut config_a = base.clone();
    config_a.output_dir = Some(dir_a.path().to_path_buf());
    let mut config_b = base;
    config_b.output_dir = Some(dir_b.path().to_path_buf());
    run_pipeline(&config_a).unwrap();
    run_pipeline(&config_b).unwrap();
    for name in [
        "summary.txt",
        "path.txt",
        "concentration.txt",
        "solution.txt",
        "trajectory.txt",
    ] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let frames_a: Vec<_> = std::fs::read_dir(dir_a.path().join("frames"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert!(!frames_a.is_empty());
}

#[test]
fn degenerate_delta_reports_the_tie() {
    // all rigidities exactly 0.5: the minimum is a whole family of staircase
    // paths, so the oracle must flag the tie and price any of them at
    // 0.5 * length; the steady flow splits and concentration cannot pass
    let config = ExperimentConfig {
        rows: 4,
        cols: 4,
        delta: 0.0,
        seed: 0,
        ..Default::default()
    };
    let summary = run_pipeline(&config).unwrap();
    assert!(!summary.path.unique);
    let expected = 0.5 * summary.path.links.len() as f64;
    assert_eq!(summary.path.cost, expected);
    assert!(summary.steady_reached);
}

#[test]
fn grounded_object_pipeline_routes_through_the_conductor() {
    let base = ExperimentConfig {
        rows: 5,
        cols: 5,
        seed: 5,
        ..Default::default()
    };
    // place the conductor straight under the source, rows 1..=3
    let plain = run_pipeline(&base).unwrap();
    let grid = build_grid(5, 5).unwrap();
    let positions = grid.positions().unwrap();
    let source_col = positions[0].1;
    let node_at = |row: usize| {
        positions
            .iter()
            .position(|&p| p == (row, source_col))
            .unwrap()
    };
    let config = ExperimentConfig {
        grounded_object: Some(GroundedObjectConfig {
            nodes: vec![node_at(1), node_at(2), node_at(3)],
            ..Default::default()
        }),
        ..base
    };
    let summary = run_pipeline(&config).unwrap();
    assert!(summary.pass, "summary: {}", summary.to_text());
    // the cheap conductor shortens the path cost and carries the discharge
    assert!(summary.path.cost < plain.path.cost);
    let grid_links = grid.link_count();
    assert!(summary.path.links.iter().any(|&k| k >= grid_links));
}

#[test]
fn voltage_source_pipeline_reports_the_effective_current() {
    let config = ExperimentConfig {
        rows: 4,
        cols: 4,
        seed: 3,
        voltage_source: Some(VoltageSourceConfig {
            voltage: 50.0,
            resistance: 50.0,
        }),
        ..Default::default()
    };
    let summary = run_pipeline(&config).unwrap();
    assert!(summary.steady_reached);
    // part of the Norton current returns through the shunt
    assert!(summary.effective_current < 1.0);
    assert!(summary.effective_current > 0.5);
    assert!(summary.pass, "summary: {}", summary.to_text());
}
