//! Direct steady-state solver for the nodal balance equations
//! `B phi(B^T v) = d`, the optimality (KKT) verification report, and the
//! exact all-linear oracle.
//!
//! The solver is a damped Newton iteration in voltage space: the Jacobian
//! `B diag(phi'(B^T v)) B^T` is symmetric positive definite whenever every
//! slope is positive, so each step is one Cholesky solve plus an Armijo
//! backtracking line search on the squared residual. When Newton stalls it
//! falls back to pseudo-transient continuation: ride the dynamics until the
//! state is near the attractor, then polish with Newton.

use nalgebra::{Cholesky, DVector};
use thiserror::Error;

use crate::characteristic::CharacteristicError;
use crate::functional::{functional_value, FunctionalValue};
use crate::network::NetworkGraph;
use crate::transient::{integrate, InjectionProfile, IntegratorControls, TransientError};

#[derive(Debug, Error)]
pub enum SteadyError {
    #[error(transparent)]
    NotEvaluable(#[from] CharacteristicError),
    #[error("operation requires all-linear characteristics")]
    NotLinear,
    #[error("Jacobian factorization failed; graph may be rank deficient")]
    Singular,
    #[error("no convergence after {iterations} Newton iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("pseudo-transient fallback failed: {0}")]
    Fallback(#[from] TransientError),
}

/// Steady operating point of the network.
#[derive(Debug, Clone)]
pub struct SteadyStateSolution {
    pub v_bar: DVector<f64>,
    /// Link currents `phi(B^T v_bar)`, exact by construction.
    pub u_bar: DVector<f64>,
    /// Flow-balance residual `||B u_bar - d||_inf`.
    pub kkt_residual: f64,
    pub j_value: FunctionalValue,
    pub injection: InjectionProfile,
    pub fallback_used: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SolverControls {
    /// Convergence threshold on the sup norm of the balance residual.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Diagonal shift keeping the Jacobian well posed on near-flat regions.
    pub regularization: f64,
    /// Enables the pseudo-transient fallback.
    pub fallback: bool,
    pub initial: Option<DVector<f64>>,
}

impl Default for SolverControls {
    fn default() -> Self {
        SolverControls {
            tolerance: 1e-10,
            max_iterations: 400,
            regularization: 1e-12,
            fallback: true,
            initial: None,
        }
    }
}

fn resistive_currents(graph: &NetworkGraph, v: &DVector<f64>) -> DVector<f64> {
    let drops = graph.voltage_drops(v);
    DVector::from_fn(graph.link_count(), |k, _| {
        graph.characteristics()[k]
            .current(drops[k])
            .expect("evaluability checked by the caller")
    })
}

/// Ohmic warm start: solve the network with linear conductances (unit ones
/// where the law is nonlinear), then scale so the strongest drop just
/// crosses the largest breakdown threshold.
fn warm_start(graph: &NetworkGraph, d_vec: &DVector<f64>) -> DVector<f64> {
    let weights: Vec<f64> = graph
        .characteristics()
        .iter()
        .map(|c| c.resistance().map_or(1.0, |r| 1.0 / r))
        .collect();
    let mut lap = graph.weighted_laplacian(&weights);
    for i in 0..graph.node_count() {
        lap[(i, i)] += 1e-12;
    }
    let Some(chol) = Cholesky::new(lap) else {
        return DVector::zeros(graph.node_count());
    };
    let v = chol.solve(d_vec);
    let max_threshold = graph
        .characteristics()
        .iter()
        .filter_map(|c| c.threshold())
        .fold(f64::NAN, f64::max);
    if max_threshold.is_nan() {
        return v; // all-linear: this already is the solution
    }
    let max_drop = graph.voltage_drops(&v).amax();
    if max_drop > 0.0 {
        v * (1.15 * max_threshold / max_drop)
    } else {
        v
    }
}

enum NewtonOutcome {
    Converged(DVector<f64>, usize),
    Stalled(DVector<f64>, f64, usize),
}

fn newton_loop(
    graph: &NetworkGraph,
    d_vec: &DVector<f64>,
    mut v: DVector<f64>,
    controls: &SolverControls,
) -> Result<NewtonOutcome, SteadyError> {
    let n = graph.node_count();
    let residual_at = |v: &DVector<f64>| graph.divergence(&resistive_currents(graph, v)) - d_vec;
    let mut f = residual_at(&v);
    let mut f_norm2 = f.norm_squared();
    for iter in 0..controls.max_iterations {
        if f.amax() <= controls.tolerance {
            return Ok(NewtonOutcome::Converged(v, iter));
        }
        let drops = graph.voltage_drops(&v);
        let slopes: Vec<f64> = graph
            .links()
            .iter()
            .map(|link| {
                graph.characteristics()[link.id]
                    .slope(drops[link.id])
                    .expect("evaluability checked by the caller")
            })
            .collect();
        let mut jac = graph.weighted_laplacian(&slopes);
        for i in 0..n {
            jac[(i, i)] += controls.regularization;
        }
        let chol = match Cholesky::new(jac) {
            Some(c) => c,
            None => {
                // one retry with a much stronger shift
                let mut jac = graph.weighted_laplacian(&slopes);
                for i in 0..n {
                    jac[(i, i)] += controls.regularization.max(1e-30) * 1e6 + 1e-14;
                }
                Cholesky::new(jac).ok_or(SteadyError::Singular)?
            }
        };
        let p = chol.solve(&(-&f));
        // directional derivative of 0.5||F||^2 is -||F||^2 - reg * F'p
        let slope0 = -f_norm2 - controls.regularization * f.dot(&p);
        if !(slope0 < -1e-300) {
            return Ok(NewtonOutcome::Stalled(v, f.amax(), iter));
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &v + alpha * &p;
            let f_trial = residual_at(&trial);
            let trial_norm2 = f_trial.norm_squared();
            if trial_norm2.is_finite() && trial_norm2 <= f_norm2 + 2e-4 * alpha * slope0 {
                v = trial;
                f = f_trial;
                f_norm2 = trial_norm2;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Ok(NewtonOutcome::Stalled(v, f.amax(), iter));
        }
    }
    let residual = f.amax();
    if residual <= controls.tolerance {
        return Ok(NewtonOutcome::Converged(v, controls.max_iterations));
    }
    Ok(NewtonOutcome::Stalled(v, residual, controls.max_iterations))
}

fn build_solution(
    graph: &NetworkGraph,
    profile: &InjectionProfile,
    v_bar: DVector<f64>,
    iterations: usize,
    fallback_used: bool,
) -> SteadyStateSolution {
    let u_bar = resistive_currents(graph, &v_bar);
    let d_vec = profile.rhs_vector(graph.node_count());
    let kkt_residual = (graph.divergence(&u_bar) - d_vec).amax();
    let j_value = functional_value(graph, &u_bar).expect("dimensions match by construction");
    SteadyStateSolution {
        v_bar,
        u_bar,
        kkt_residual,
        j_value,
        injection: *profile,
        fallback_used,
        iterations,
    }
}

/// Solves `B phi(B^T v) = d` by damped Newton, with pseudo-transient
/// continuation as a fallback when the iteration stalls.
pub fn solve_steady(
    graph: &NetworkGraph,
    profile: &InjectionProfile,
    controls: &SolverControls,
) -> Result<SteadyStateSolution, SteadyError> {
    for c in graph.characteristics() {
        if !c.is_evaluable() {
            return Err(CharacteristicError::NotEvaluable.into());
        }
    }
    let d_vec = profile.rhs_vector(graph.node_count());
    let start = controls
        .initial
        .clone()
        .unwrap_or_else(|| warm_start(graph, &d_vec));

    let (stalled_v, residual, spent) = match newton_loop(graph, &d_vec, start, controls)? {
        NewtonOutcome::Converged(v, iterations) => {
            return Ok(build_solution(graph, profile, v, iterations, false))
        }
        NewtonOutcome::Stalled(v, residual, iterations) => (v, residual, iterations),
    };
    if !controls.fallback {
        return Err(SteadyError::NonConvergence {
            iterations: spent,
            residual,
        });
    }

    // ride the dynamics toward the attractor, then polish
    let ptc = IntegratorControls {
        steady_tol: 1e-6,
        steady_dwell: 20,
        ..Default::default()
    };
    let record = integrate(graph, profile, Some(&stalled_v), 1e9, &ptc)?;
    let near = record.terminal_state().voltages.clone();
    match newton_loop(graph, &d_vec, near, controls)? {
        NewtonOutcome::Converged(v, iterations) => {
            Ok(build_solution(graph, profile, v, spent + iterations, true))
        }
        NewtonOutcome::Stalled(_, residual, iterations) => Err(SteadyError::NonConvergence {
            iterations: spent + iterations,
            residual,
        }),
    }
}

/// Direct solve of an all-linear network through its conductance Laplacian.
/// Exact up to factorization error; the ground truth for the nonlinear path.
pub fn solve_linear_oracle(
    graph: &NetworkGraph,
    profile: &InjectionProfile,
) -> Result<SteadyStateSolution, SteadyError> {
    if !graph.all_linear() {
        return Err(SteadyError::NotLinear);
    }
    let weights: Vec<f64> = graph
        .characteristics()
        .iter()
        .map(|c| 1.0 / c.resistance().expect("all-linear checked above"))
        .collect();
    let lap = graph.weighted_laplacian(&weights);
    let chol = Cholesky::new(lap).ok_or(SteadyError::Singular)?;
    let v_bar = chol.solve(&profile.rhs_vector(graph.node_count()));
    Ok(build_solution(graph, profile, v_bar, 0, false))
}

/// Optimality check of a steady solution.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// Per-link gap between the inverse characteristic at `u_bar` and the
    /// voltage drop (distance to the admissible band for ideal links).
    pub stationarity: Vec<f64>,
    pub max_stationarity: f64,
    pub worst_stationarity_link: Option<usize>,
    /// Per-node flow-balance violation.
    pub feasibility: Vec<f64>,
    pub max_feasibility: f64,
    pub worst_feasibility_node: Option<usize>,
    pub stationarity_ok: bool,
    pub feasibility_ok: bool,
}

pub const KKT_STATIONARITY_TOL: f64 = 1e-8;
pub const KKT_FEASIBILITY_TOL: f64 = 1e-8;

/// Reports the worst stationarity and flow-balance violations of a solution.
/// Never fails; violations are data, not errors.
pub fn verify_kkt(graph: &NetworkGraph, sol: &SteadyStateSolution) -> KktReport {
    let drops = graph.voltage_drops(&sol.v_bar);
    let stationarity: Vec<f64> = graph
        .characteristics()
        .iter()
        .enumerate()
        .map(|(k, c)| match c.voltage(sol.u_bar[k]) {
            Ok(g) => (g - drops[k]).abs(),
            Err(_) => {
                // ideal link at zero current: the drop must stay inside
                // the rigidity band
                let v = c.threshold().unwrap_or(0.0);
                (drops[k].abs() - v).max(0.0)
            }
        })
        .collect();
    let d_vec = sol.injection.rhs_vector(graph.node_count());
    let feasibility: Vec<f64> = (graph.divergence(&sol.u_bar) - d_vec)
        .iter()
        .map(|x| x.abs())
        .collect();

    let argmax = |xs: &[f64]| {
        xs.iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &x)| match best {
                Some((_, bx)) if bx >= x => best,
                _ => Some((i, x)),
            })
    };
    let stat_worst = argmax(&stationarity);
    let feas_worst = argmax(&feasibility);
    KktReport {
        max_stationarity: stat_worst.map_or(0.0, |(_, x)| x),
        worst_stationarity_link: stat_worst.map(|(i, _)| i),
        max_feasibility: feas_worst.map_or(0.0, |(_, x)| x),
        worst_feasibility_node: feas_worst.map(|(i, _)| i),
        stationarity_ok: stat_worst.map_or(true, |(_, x)| x <= KKT_STATIONARITY_TOL),
        feasibility_ok: feas_worst.map_or(true, |(_, x)| x <= KKT_FEASIBILITY_TOL),
        stationarity,
        feasibility,
    }
}

/// Solution export: per-node voltages and per-link currents with the
/// residual summary, one document per solve.
pub fn solution_text(graph: &NetworkGraph, sol: &SteadyStateSolution) -> String {
    let mut out = String::new();
    out.push_str("solution\n");
    out.push_str(&format!("injected {}\n", sol.injection.current));
    out.push_str(&format!("kkt_residual {:e}\n", sol.kkt_residual));
    out.push_str(&format!("functional {:e}\n", sol.j_value.value));
    out.push_str(&format!("iterations {}\n", sol.iterations));
    out.push_str(&format!("fallback {}\n", sol.fallback_used));
    for i in 0..graph.node_count() {
        out.push_str(&format!("node {i} {:e}\n", sol.v_bar[i]));
    }
    for k in 0..graph.link_count() {
        out.push_str(&format!("link {k} {:e}\n", sol.u_bar[k]));
    }
    out.push_str("end\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristic::LinkCharacteristic;
    use crate::network::{build_grid, LinkSpec, Terminal};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_link(resistance: f64) -> NetworkGraph {
        NetworkGraph::new(
            1,
            vec![LinkSpec::new(
                Terminal::Node(0),
                Terminal::Ground,
                LinkCharacteristic::linear(resistance),
            )],
        )
        .unwrap()
    }

    fn parallel_pair(r1: f64, r2: f64) -> NetworkGraph {
        NetworkGraph::new(
            1,
            vec![
                LinkSpec::new(
                    Terminal::Node(0),
                    Terminal::Ground,
                    LinkCharacteristic::linear(r1),
                ),
                LinkSpec::new(
                    Terminal::Node(0),
                    Terminal::Ground,
                    LinkCharacteristic::linear(r2),
                ),
            ],
        )
        .unwrap()
    }

    /// Seeded piecewise-threshold grid shared by the nonlinear tests.
    fn threshold_grid(rows: usize, cols: usize, seed: u64) -> NetworkGraph {
        let g = build_grid(rows, cols).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chars: Vec<LinkCharacteristic> = (0..g.link_count())
            .map(|_| LinkCharacteristic::piecewise(0.15 + 0.7 * rng.gen::<f64>(), 1e-5, 800.0))
            .collect();
        g.with_characteristics(chars).unwrap()
    }

    #[test]
    fn single_linear_link_is_ohms_law() {
        let g = single_link(2.0);
        let sol = solve_steady(&g, &InjectionProfile::new(1.5), &SolverControls::default())
            .unwrap();
        assert_relative_eq!(sol.v_bar[0], 3.0, max_relative = 1e-10);
        assert_relative_eq!(sol.u_bar[0], 1.5, max_relative = 1e-10);
        assert!(sol.kkt_residual <= 1e-10);
    }

    #[test]
    fn parallel_divider_splits_by_conductance() {
        let g = parallel_pair(1.0, 3.0);
        let sol = solve_steady(&g, &InjectionProfile::new(1.0), &SolverControls::default())
            .unwrap();
        assert_relative_eq!(sol.u_bar[0], 0.75, max_relative = 1e-9);
        assert_relative_eq!(sol.u_bar[1], 0.25, max_relative = 1e-9);
    }

    #[test]
    fn newton_matches_the_linear_oracle() {
        let g = build_grid(4, 4).unwrap();
        let chars: Vec<LinkCharacteristic> = (0..g.link_count())
            .map(|k| LinkCharacteristic::linear(0.5 + 0.1 * (k % 7) as f64))
            .collect();
        let g = g.with_characteristics(chars).unwrap();
        let profile = InjectionProfile::new(1.0);
        let newton = solve_steady(&g, &profile, &SolverControls::default()).unwrap();
        let oracle = solve_linear_oracle(&g, &profile).unwrap();
        assert!((newton.u_bar - oracle.u_bar).amax() <= 1e-8);
    }

    #[test]
    fn linear_oracle_conserves_current() {
        let g = build_grid(2, 2).unwrap();
        let profile = InjectionProfile::new(1.0);
        let sol = solve_linear_oracle(&g, &profile).unwrap();
        assert!(sol.kkt_residual <= 1e-12);
    }

    #[test]
    fn linear_oracle_rejects_nonlinear_links() {
        let g = threshold_grid(2, 2, 1);
        assert!(matches!(
            solve_linear_oracle(&g, &InjectionProfile::new(1.0)),
            Err(SteadyError::NotLinear)
        ));
    }

    #[test]
    fn linear_solutions_obey_superposition() {
        let g = build_grid(3, 3).unwrap();
        let one = solve_linear_oracle(&g, &InjectionProfile::new(1.0)).unwrap();
        let two = solve_linear_oracle(&g, &InjectionProfile::new(2.0)).unwrap();
        assert!((2.0 * one.u_bar - two.u_bar).amax() < 1e-12);
    }

    #[test]
    fn dissipated_energy_is_minimal_over_circulations() {
        use crate::functional::dissipated_energy;
        let g = build_grid(3, 3).unwrap();
        let sol = solve_linear_oracle(&g, &InjectionProfile::new(1.0)).unwrap();
        let base = dissipated_energy(&g, &sol.u_bar).unwrap();
        let basis = g.cycle_basis();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let mut z = DVector::zeros(g.link_count());
            for cycle in &basis {
                z += (rng.gen::<f64>() - 0.5) * cycle;
            }
            let norm = z.norm();
            if norm > 0.0 {
                z *= 0.1 / norm;
            }
            let perturbed = dissipated_energy(&g, &(&sol.u_bar + &z)).unwrap();
            assert!(base <= perturbed + 1e-10);
        }
    }

    #[test]
    fn kkt_report_is_clean_on_a_linear_solution() {
        let g = build_grid(3, 3).unwrap();
        let sol = solve_linear_oracle(&g, &InjectionProfile::new(1.0)).unwrap();
        let report = verify_kkt(&g, &sol);
        assert!(report.max_stationarity <= 1e-10);
        assert!(report.max_feasibility <= 1e-10);
        assert!(report.stationarity_ok && report.feasibility_ok);
    }

    #[test]
    fn kkt_report_flags_a_constructed_violation() {
        let g = build_grid(3, 3).unwrap();
        let mut sol = solve_linear_oracle(&g, &InjectionProfile::new(1.0)).unwrap();
        sol.u_bar[2] += 1e-3;
        let report = verify_kkt(&g, &sol);
        assert!(!report.feasibility_ok);
        assert_relative_eq!(report.max_feasibility, 1e-3, max_relative = 1e-6);
    }

    #[test]
    fn threshold_grid_solution_is_stationary() {
        let g = threshold_grid(6, 6, 42);
        let sol = solve_steady(&g, &InjectionProfile::new(1.0), &SolverControls::default())
            .unwrap();
        assert!(sol.kkt_residual <= 1e-10);
        let report = verify_kkt(&g, &sol);
        assert!(report.max_stationarity <= 1e-6);
        assert!(report.max_feasibility <= 1e-8);
    }

    #[test]
    fn distinct_random_starts_reach_the_same_currents() {
        let g = threshold_grid(4, 4, 3);
        let profile = InjectionProfile::new(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut reference: Option<DVector<f64>> = None;
        for _ in 0..2 {
            let start = DVector::from_fn(g.node_count(), |_, _| 4.0 * (rng.gen::<f64>() - 0.5));
            let controls = SolverControls {
                initial: Some(start),
                ..Default::default()
            };
            let sol = solve_steady(&g, &profile, &controls).unwrap();
            match &reference {
                None => reference = Some(sol.u_bar),
                Some(u) => assert!((u - &sol.u_bar).amax() <= 1e-6),
            }
        }
    }

    #[test]
    fn starved_iteration_budget_reports_nonconvergence() {
        let g = threshold_grid(3, 3, 5);
        let controls = SolverControls {
            max_iterations: 1,
            fallback: false,
            initial: Some(DVector::zeros(g.node_count())),
            ..Default::default()
        };
        assert!(matches!(
            solve_steady(&g, &InjectionProfile::new(1.0), &controls),
            Err(SteadyError::NonConvergence { .. })
        ));
    }

    #[test]
    fn thevenin_source_behaves_as_a_voltage_divider() {
        // series source E with internal resistance, modeled as a Norton
        // injection E / R_s plus a shunt link: the load sees the divider value
        let (e, r_s, r_load) = (10.0, 2.0, 3.0);
        let g = parallel_pair(r_load, r_s);
        let sol = solve_steady(
            &g,
            &InjectionProfile::new(e / r_s),
            &SolverControls::default(),
        )
        .unwrap();
        assert_relative_eq!(sol.v_bar[0], e * r_load / (r_s + r_load), max_relative = 1e-9);
    }

    #[test]
    fn solution_text_lists_every_node_and_link() {
        let g = build_grid(2, 2).unwrap();
        let sol = solve_linear_oracle(&g, &InjectionProfile::new(1.0)).unwrap();
        let text = solution_text(&g, &sol);
        assert_eq!(
            text.matches("\nnode ").count(),
            g.node_count()
        );
        assert_eq!(text.matches("\nlink ").count(), g.link_count());
    }
}
