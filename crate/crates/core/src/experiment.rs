//! Experiment harness: configuration, seeded rigidity draws, the end-to-end
//! discharge pipeline, and parameter sweeps.
//!
//! Rigidity draws use ChaCha8 keyed by the 64-bit seed, one `f64` per link in
//! link-id order, so every run is reproducible from `(config, seed)` alone.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::characteristic::LinkCharacteristic;
use crate::network::{build_grid_with_source, NetworkError, NetworkGraph, Terminal};
use crate::path::{
    concentration_report, min_threshold_path, path_text, ConcentrationReport, PathError,
    PathResult,
};
use crate::steady::{solution_text, solve_steady, SolverControls, SteadyError};
use crate::transient::{
    integrate, write_frames, InjectionProfile, IntegratorControls, TransientError,
};

/// Support and concentration cutoff as a fraction of the injected current.
pub const CONCENTRATION_TOLERANCE: f64 = 0.01;

/// Path weight assigned to conductor links (grounded objects): effectively
/// free to traverse, but strictly positive as the oracle requires.
pub const OBJECT_RIGIDITY: f64 = 1e-9;

/// Path weight assigned to the Thevenin source resistor, excluding it from
/// the discharge-path search.
pub const SOURCE_LINK_RIGIDITY: f64 = 1e9;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("grid dimensions must be at least 1x1")]
    BadDims,
    #[error("source position ({0}, {1}) is outside the grid")]
    BadSource(usize, usize),
    #[error("delta must lie in [0, 1), got {0}")]
    BadDelta(f64),
    #[error("{0} must be positive and finite")]
    NotPositive(&'static str),
    #[error("injected current must be finite")]
    BadCurrent,
    #[error("sweep requires nonempty axis values and seeds")]
    EmptySweep,
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config file: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundedObjectConfig {
    pub nodes: Vec<usize>,
    pub resistance: f64,
    pub capacitance: f64,
}

impl Default for GroundedObjectConfig {
    fn default() -> Self {
        GroundedObjectConfig {
            nodes: Vec::new(),
            resistance: 1e-6,
            capacitance: 1e3,
        }
    }
}

/// Voltage-generator drive, modeled as its Norton equivalent: an injection
/// of `voltage / resistance` plus a shunt resistor at the source node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageSourceConfig {
    pub voltage: f64,
    pub resistance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rows: usize,
    pub cols: usize,
    /// Source cell; defaults to the top-row center.
    pub source_row: Option<usize>,
    pub source_col: Option<usize>,
    /// Injected current (ignored when a voltage source is configured).
    pub injected_current: f64,
    /// Rigidity spread: thresholds are uniform on [0.5 - delta/2, 0.5 + delta/2].
    pub delta: f64,
    pub plasma_conductivity: f64,
    pub sub_conductivity: f64,
    pub capacitance: f64,
    pub seed: u64,
    pub t_end: f64,
    pub sample_cadence: f64,
    /// Fraction of |d| above which a link counts as active.
    pub activity_factor: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub steady_tol: f64,
    pub steady_dwell: usize,
    pub frame_count: usize,
    pub output_dir: Option<PathBuf>,
    pub grounded_object: Option<GroundedObjectConfig>,
    pub voltage_source: Option<VoltageSourceConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            rows: 10,
            cols: 10,
            source_row: None,
            source_col: None,
            injected_current: 1.0,
            delta: 0.7,
            plasma_conductivity: 800.0,
            sub_conductivity: 1e-5,
            capacitance: 1.0,
            seed: 0,
            t_end: 1e8,
            sample_cadence: 0.0,
            activity_factor: 0.01,
            abs_tol: 1e-8,
            rel_tol: 1e-6,
            steady_tol: 1e-8,
            steady_dwell: 50,
            frame_count: 4,
            output_dir: None,
            grounded_object: None,
            voltage_source: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ConfigError::BadDims);
        }
        let sr = self.source_row.unwrap_or(0);
        let sc = self.source_col.unwrap_or((self.cols - 1) / 2);
        if sr >= self.rows || sc >= self.cols {
            return Err(ConfigError::BadSource(sr, sc));
        }
        // every rigidity 0.5 - delta/2 must stay positive
        if !(self.delta >= 0.0 && self.delta < 1.0) {
            return Err(ConfigError::BadDelta(self.delta));
        }
        if !self.injected_current.is_finite() {
            return Err(ConfigError::BadCurrent);
        }
        let positive: [(&'static str, f64); 8] = [
            ("plasma_conductivity", self.plasma_conductivity),
            ("sub_conductivity", self.sub_conductivity),
            ("capacitance", self.capacitance),
            ("t_end", self.t_end),
            ("activity_factor", self.activity_factor),
            ("abs_tol", self.abs_tol),
            ("rel_tol", self.rel_tol),
            ("steady_tol", self.steady_tol),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if let Some(vs) = &self.voltage_source {
            if !(vs.resistance.is_finite() && vs.resistance > 0.0) {
                return Err(ConfigError::NotPositive("voltage_source.resistance"));
            }
            if !vs.voltage.is_finite() {
                return Err(ConfigError::BadCurrent);
            }
        }
        if let Some(obj) = &self.grounded_object {
            if !(obj.resistance.is_finite() && obj.resistance > 0.0) {
                return Err(ConfigError::NotPositive("grounded_object.resistance"));
            }
            if !(obj.capacitance.is_finite() && obj.capacitance > 0.0) {
                return Err(ConfigError::NotPositive("grounded_object.capacitance"));
            }
        }
        Ok(())
    }

    /// Norton injection current: `d`, or `voltage / resistance` in
    /// voltage-source mode.
    pub fn norton_current(&self) -> f64 {
        match &self.voltage_source {
            Some(vs) => vs.voltage / vs.resistance,
            None => self.injected_current,
        }
    }

    pub fn integrator_controls(&self) -> IntegratorControls {
        IntegratorControls {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            steady_tol: self.steady_tol,
            steady_dwell: self.steady_dwell,
            sample_cadence: self.sample_cadence,
            activity_threshold: Some(self.activity_factor * self.norton_current().abs()),
            ..Default::default()
        }
    }

    pub fn solver_controls(&self) -> SolverControls {
        SolverControls::default()
    }
}

/// Loads a TOML config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)?;
    Ok(toml::from_str(&text)?)
}

/// Draws `m` independent rigidities, uniform on
/// `[0.5 - delta/2, 0.5 + delta/2]`, from ChaCha8 keyed by the config seed.
/// Identical seeds give bitwise-identical vectors.
pub fn draw_thresholds(config: &ExperimentConfig, m: usize) -> Result<Vec<f64>, ConfigError> {
    if !(config.delta >= 0.0 && config.delta < 1.0) {
        return Err(ConfigError::BadDelta(config.delta));
    }
    let lo = 0.5 - config.delta / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok((0..m).map(|_| lo + config.delta * rng.gen::<f64>()).collect())
}

/// Fully built experiment network: graph, per-link path rigidities, and the
/// bookkeeping the pipeline needs.
#[derive(Debug, Clone)]
pub struct PreparedNetwork {
    pub graph: NetworkGraph,
    pub rigidities: Vec<f64>,
    /// Thevenin shunt link, excluded from path analysis, when present.
    pub source_link: Option<usize>,
    /// Norton injection current.
    pub injected: f64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config stage: {0}")]
    Config(#[from] ConfigError),
    #[error("network stage: {0}")]
    Network(#[from] NetworkError),
    #[error("path stage: {0}")]
    Path(#[from] PathError),
    #[error("steady stage: {0}")]
    Steady(#[from] SteadyError),
    #[error("transient stage: {0}")]
    Transient(#[from] TransientError),
    #[error("export stage: {0}")]
    Export(#[from] std::io::Error),
}

/// Builds the grid, draws rigidities, installs the piecewise-threshold laws,
/// and attaches the optional grounded object and Thevenin source.
pub fn prepare_network(config: &ExperimentConfig) -> Result<PreparedNetwork, PipelineError> {
    config.validate()?;
    let sr = config.source_row.unwrap_or(0);
    let sc = config.source_col.unwrap_or((config.cols - 1) / 2);
    let mut graph = build_grid_with_source(config.rows, config.cols, sr, sc)?;
    if config.capacitance != 1.0 {
        graph = graph.with_scaled_capacitances(config.capacitance)?;
    }
    let mut rigidities = draw_thresholds(config, graph.link_count())?;
    let chars: Vec<LinkCharacteristic> = rigidities
        .iter()
        .map(|&v| {
            LinkCharacteristic::piecewise(v, config.sub_conductivity, config.plasma_conductivity)
        })
        .collect();
    let mut graph = graph.with_characteristics(chars)?;

    if let Some(object) = &config.grounded_object {
        let before = graph.link_count();
        graph = graph.attach_grounded_object(&object.nodes, object.resistance, object.capacitance)?;
        rigidities.extend(std::iter::repeat(OBJECT_RIGIDITY).take(graph.link_count() - before));
    }

    let mut source_link = None;
    if let Some(vs) = &config.voltage_source {
        let mut specs: Vec<crate::network::LinkSpec> = graph
            .links()
            .iter()
            .map(|l| crate::network::LinkSpec {
                tail: l.tail,
                head: l.head,
                capacitance: graph.capacitances()[l.id],
                characteristic: graph.characteristics()[l.id],
            })
            .collect();
        specs.push(crate::network::LinkSpec::new(
            Terminal::Node(0),
            Terminal::Ground,
            LinkCharacteristic::linear(vs.resistance),
        ));
        source_link = Some(specs.len() - 1);
        rigidities.push(SOURCE_LINK_RIGIDITY);
        let positions = graph.positions().map(|p| p.to_vec());
        let dims = graph.grid_dims();
        graph = NetworkGraph::with_layout(graph.node_count(), specs, positions, dims)?;
    }

    Ok(PreparedNetwork {
        graph,
        rigidities,
        source_link,
        injected: config.norton_current(),
    })
}

/// Outcome of one end-to-end run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub path: PathResult,
    pub concentration: ConcentrationReport,
    /// Steady support `{k : |u_k| > 0.01 |d|}` equals the path link set.
    pub support_matches_path: bool,
    pub peak_active: usize,
    pub final_active: usize,
    pub steady_reached: bool,
    pub steady_residual: f64,
    pub newton_fallback: bool,
    /// Worst per-link gap between the transient terminal currents and the
    /// direct steady solve.
    pub cross_check_max_diff: f64,
    pub lyapunov_max_increase: f64,
    /// Current actually delivered to the discharge network (differs from the
    /// Norton current only in voltage-source mode).
    pub effective_current: f64,
    pub pass: bool,
}

impl RunSummary {
    /// Deterministic key=value rendering; identical runs produce identical
    /// bytes.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        s.push_str("summary\n");
        s.push_str(&format!("pass={}\n", self.pass));
        s.push_str(&format!("rows={}\n", c.rows));
        s.push_str(&format!("cols={}\n", c.cols));
        s.push_str(&format!("seed={}\n", c.seed));
        s.push_str(&format!("delta={}\n", c.delta));
        s.push_str(&format!("plasma_conductivity={}\n", c.plasma_conductivity));
        s.push_str(&format!("sub_conductivity={}\n", c.sub_conductivity));
        s.push_str(&format!("injected={}\n", self.config.norton_current()));
        s.push_str(&format!("effective_current={}\n", self.effective_current));
        s.push_str(&format!("path_cost={}\n", self.path.cost));
        s.push_str(&format!("path_length={}\n", self.path.links.len()));
        s.push_str(&format!("path_unique={}\n", self.path.unique));
        s.push_str(&format!(
            "support_matches_path={}\n",
            self.support_matches_path
        ));
        s.push_str(&format!("max_off_path={:e}\n", self.concentration.max_off_path));
        s.push_str(&format!(
            "max_on_path_deviation={:e}\n",
            self.concentration.max_on_path_deviation
        ));
        s.push_str(&format!("l1_distance={:e}\n", self.concentration.l1_distance));
        s.push_str(&format!("peak_active={}\n", self.peak_active));
        s.push_str(&format!("final_active={}\n", self.final_active));
        s.push_str(&format!("steady_reached={}\n", self.steady_reached));
        s.push_str(&format!("steady_residual={:e}\n", self.steady_residual));
        s.push_str(&format!("newton_fallback={}\n", self.newton_fallback));
        s.push_str(&format!(
            "cross_check_max_diff={:e}\n",
            self.cross_check_max_diff
        ));
        s.push_str(&format!(
            "lyapunov_max_increase={:e}\n",
            self.lyapunov_max_increase
        ));
        s.push_str("end\n");
        s
    }
}

/// Runs one full discharge experiment: build, draw, integrate, solve, compare
/// against the path oracle, and export.
///
/// The pass verdict requires the steady support to match the oracle path at
/// the 1% level, backed by the transient terminal state agreeing with the
/// direct solve to 1e-4 per link.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<RunSummary, PipelineError> {
    let prepared = prepare_network(config)?;
    let graph = &prepared.graph;
    let d = prepared.injected;
    let profile = InjectionProfile::new(d);

    let path = min_threshold_path(graph, &prepared.rigidities)?;
    let steady = solve_steady(graph, &profile, &config.solver_controls())?;
    let mut record = integrate(graph, &profile, None, config.t_end, &config.integrator_controls())?;
    record.recompute_lyapunov(graph, &steady.v_bar);

    let cross_check_max_diff = (record.terminal_currents() - &steady.u_bar).amax();

    // mask the Thevenin shunt out of the discharge-path comparison and use
    // the current actually entering the network
    let mut u_eval = steady.u_bar.clone();
    let effective_current = match prepared.source_link {
        Some(k) => {
            let shunt = u_eval[k];
            u_eval[k] = 0.0;
            d - shunt
        }
        None => d,
    };
    let concentration =
        concentration_report(graph, &u_eval, &path, effective_current, CONCENTRATION_TOLERANCE);
    let cutoff = CONCENTRATION_TOLERANCE * effective_current.abs();
    let mut support: Vec<usize> = (0..graph.link_count())
        .filter(|&k| u_eval[k].abs() > cutoff)
        .collect();
    support.sort_unstable();
    let mut path_links = path.links.clone();
    path_links.sort_unstable();
    let support_matches_path = support == path_links;

    let peak_active = record.active_counts.iter().copied().max().unwrap_or(0);
    let final_active = record.active_counts.last().copied().unwrap_or(0);

    let pass = support_matches_path
        && concentration.pass
        && record.steady_reached
        && cross_check_max_diff <= 1e-4;

    let summary = RunSummary {
        config: config.clone(),
        path,
        concentration,
        support_matches_path,
        peak_active,
        final_active,
        steady_reached: record.steady_reached,
        steady_residual: steady.kkt_residual,
        newton_fallback: steady.fallback_used,
        cross_check_max_diff,
        lyapunov_max_increase: record.max_lyapunov_increase(),
        effective_current,
        pass,
    };

    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.txt"), summary.to_text())?;
        fs::write(dir.join("path.txt"), path_text(graph, &summary.path))?;
        fs::write(
            dir.join("concentration.txt"),
            summary.concentration.to_text(),
        )?;
        fs::write(dir.join("solution.txt"), solution_text(graph, &steady))?;
        let mut buf = Vec::new();
        record.write_trajectory(&mut buf)?;
        fs::write(dir.join("trajectory.txt"), buf)?;
        write_frames(&record, graph, &dir.join("frames"), config.frame_count)?;
    }
    Ok(summary)
}

/// Sweep axis: which config field the cells vary.
#[derive(Debug, Clone)]
pub enum SweepAxis {
    Delta(Vec<f64>),
    PlasmaConductivity(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Delta(_) => "delta",
            SweepAxis::PlasmaConductivity(_) => "plasma_conductivity",
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            SweepAxis::Delta(v) | SweepAxis::PlasmaConductivity(v) => v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub axis_value: f64,
    pub seed: u64,
    pub peak_active: Option<usize>,
    pub final_active: Option<usize>,
    pub path_length: Option<usize>,
    pub l1_distance: Option<f64>,
    pub pass: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub axis_name: &'static str,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    /// Mean peak activity per axis value, in axis order of first appearance.
    pub fn mean_peak_by_axis(&self) -> Vec<(f64, f64)> {
        let mut order: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !order.iter().any(|&x| x == r.axis_value) {
                order.push(r.axis_value);
            }
        }
        order
            .into_iter()
            .map(|x| {
                let peaks: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.axis_value == x)
                    .filter_map(|r| r.peak_active.map(|p| p as f64))
                    .collect();
                let mean = if peaks.is_empty() {
                    f64::NAN
                } else {
                    peaks.iter().sum::<f64>() / peaks.len() as f64
                };
                (x, mean)
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "{}\tseed\tpeak_active\tfinal_active\tpath_length\tl1_distance\tpass\terror\n",
            self.axis_name
        );
        for r in &self.rows {
            let opt_u = |x: Option<usize>| x.map_or("-".to_string(), |v| v.to_string());
            let opt_f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:e}"));
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.axis_value,
                r.seed,
                opt_u(r.peak_active),
                opt_u(r.final_active),
                opt_u(r.path_length),
                opt_f(r.l1_distance),
                r.pass,
                r.error.as_deref().unwrap_or("-"),
            ));
        }
        s
    }
}

/// Runs the pipeline over every (axis value, seed) cell. Cells execute in
/// parallel, each with its own output partition; failures are recorded in
/// the table and do not stop the sweep.
pub fn sweep(
    base: &ExperimentConfig,
    axis: &SweepAxis,
    seeds: &[u64],
) -> Result<SweepTable, ConfigError> {
    if axis.values().is_empty() || seeds.is_empty() {
        return Err(ConfigError::EmptySweep);
    }
    base.validate()?;
    let cells: Vec<(f64, u64)> = axis
        .values()
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(value, seed)| {
            let mut config = base.clone();
            config.seed = seed;
            match axis {
                SweepAxis::Delta(_) => config.delta = value,
                SweepAxis::PlasmaConductivity(_) => config.plasma_conductivity = value,
            }
            if let Some(dir) = &base.output_dir {
                config.output_dir =
                    Some(dir.join(format!("cell_{}_{}_{}", axis.name(), value, seed)));
            }
            match run_pipeline(&config) {
                Ok(summary) => SweepRow {
                    axis_value: value,
                    seed,
                    peak_active: Some(summary.peak_active),
                    final_active: Some(summary.final_active),
                    path_length: Some(summary.path.links.len()),
                    l1_distance: Some(summary.concentration.l1_distance),
                    pass: summary.pass,
                    error: None,
                },
                Err(e) => SweepRow {
                    axis_value: value,
                    seed,
                    peak_active: None,
                    final_active: None,
                    path_length: None,
                    l1_distance: None,
                    pass: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let table = SweepTable {
        axis_name: axis.name(),
        rows,
    };
    if let Some(dir) = &base.output_dir {
        fs::create_dir_all(dir).map_err(ConfigError::Io)?;
        fs::write(dir.join("sweep.tsv"), table.to_tsv()).map_err(ConfigError::Io)?;
    }
    Ok(table)
}
