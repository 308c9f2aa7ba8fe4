//! Minimum-rigidity path oracle, independent of the circuit solvers.
//!
//! Links are traversed undirected with weight equal to their dielectric
//! rigidity; the oracle also builds the sharp-limit current distribution,
//! cross-checks the path cost against a flow LP, and runs the sharpness
//! convergence study.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;
use thiserror::Error;

use crate::characteristic::LinkCharacteristic;
use crate::network::{NetworkGraph, Terminal};
use crate::simplex::{solve_equality_lp, SimplexError};
use crate::steady::{solve_steady, SolverControls, SteadyError};
use crate::transient::InjectionProfile;

/// Relative slack under which two source-to-ground path costs count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("expected {expected} per-link rigidities, got {got}")]
    ThresholdMismatch { expected: usize, got: usize },
    #[error("rigidity of link {0} must be positive and finite")]
    BadThreshold(usize),
    #[error("ground is unreachable from the source")]
    GroundUnreachable,
    #[error("flow program infeasible or ill-conditioned: {0}")]
    Lp(#[from] SimplexError),
    #[error("steady solve failed at ladder rung {rung} (plasma conductivity {plasma}): {source}")]
    Rung {
        rung: usize,
        plasma: f64,
        source: SteadyError,
    },
}

/// Source-to-ground path reported by the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    /// Links in traversal order; the first touches node 0, the last ground.
    pub links: Vec<usize>,
    /// Exact sum of member rigidities in traversal order.
    pub cost: f64,
    /// False when a second path ties the optimum within [`TIE_TOLERANCE`].
    pub unique: bool,
}

impl PathResult {
    /// Nodes visited in order, from the source terminal to ground.
    pub fn nodes(&self, graph: &NetworkGraph) -> Vec<Terminal> {
        let mut current = Terminal::Node(0);
        let mut out = vec![current];
        for &k in &self.links {
            let link = graph.links()[k];
            current = if link.tail == current {
                link.head
            } else {
                link.tail
            };
            out.push(current);
        }
        out
    }
}

/// Sharp-limit current distribution: the whole injection on one path.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealDistribution {
    pub currents: DVector<f64>,
    /// Link ids carrying nonzero current.
    pub support: Vec<usize>,
}

const GROUND: usize = usize::MAX;

fn vertex(t: Terminal) -> usize {
    t.node().unwrap_or(GROUND)
}

#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    vertex: usize,
    via_link: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: the binary heap must pop the smallest cost first;
        // vertex/link order makes ties deterministic
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.vertex.cmp(&self.vertex))
            .then_with(|| other.via_link.cmp(&self.via_link))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra distances from `start` to every vertex (ground included) over
/// the undirected link set. Returns (distance, predecessor link) tables
/// indexed by internal node id, plus the ground entry.
struct Distances {
    node: Vec<f64>,
    ground: f64,
    prev_node: Vec<Option<(usize, usize)>>, // (link id, previous vertex)
    prev_ground: Option<(usize, usize)>,
}

fn dijkstra(graph: &NetworkGraph, thresholds: &[f64], start: usize) -> Distances {
    let n = graph.node_count();
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + 1];
    let slot = |v: usize| if v == GROUND { n } else { v };
    for link in graph.links() {
        let (a, b) = (vertex(link.tail), vertex(link.head));
        adjacency[slot(a)].push((link.id, b));
        adjacency[slot(b)].push((link.id, a));
    }

    let mut dist = vec![f64::INFINITY; n + 1];
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; n + 1];
    let mut done = vec![false; n + 1];
    let mut heap = BinaryHeap::new();
    dist[slot(start)] = 0.0;
    heap.push(HeapEntry {
        cost: 0.0,
        vertex: start,
        via_link: usize::MAX,
    });
    while let Some(entry) = heap.pop() {
        let s = slot(entry.vertex);
        if done[s] {
            continue;
        }
        done[s] = true;
        for &(link, other) in &adjacency[s] {
            let so = slot(other);
            let candidate = dist[s] + thresholds[link];
            if candidate < dist[so] {
                dist[so] = candidate;
                prev[so] = Some((link, entry.vertex));
                heap.push(HeapEntry {
                    cost: candidate,
                    vertex: other,
                    via_link: link,
                });
            }
        }
    }
    Distances {
        ground: dist[n],
        prev_ground: prev[n],
        node: dist[..n].to_vec(),
        prev_node: prev[..n].to_vec(),
    }
}

fn check_thresholds(graph: &NetworkGraph, thresholds: &[f64]) -> Result<(), PathError> {
    if thresholds.len() != graph.link_count() {
        return Err(PathError::ThresholdMismatch {
            expected: graph.link_count(),
            got: thresholds.len(),
        });
    }
    for (k, v) in thresholds.iter().enumerate() {
        if !(v.is_finite() && *v > 0.0) {
            return Err(PathError::BadThreshold(k));
        }
    }
    Ok(())
}

/// Minimum-rigidity path from node 0 to ground.
///
/// Ties within [`TIE_TOLERANCE`] of the optimum are detected by checking, via
/// a reverse Dijkstra pass, whether any link outside the reported path also
/// lies on some optimal path; the deterministic heap order decides which tied
/// path is reported.
pub fn min_threshold_path(
    graph: &NetworkGraph,
    thresholds: &[f64],
) -> Result<PathResult, PathError> {
    check_thresholds(graph, thresholds)?;
    let forward = dijkstra(graph, thresholds, 0);
    if !forward.ground.is_finite() {
        return Err(PathError::GroundUnreachable);
    }

    // walk predecessors back from ground
    let mut links = Vec::new();
    let mut at = GROUND;
    loop {
        let prev = if at == GROUND {
            forward.prev_ground
        } else {
            forward.prev_node[at]
        };
        let (link, before) = prev.expect("predecessor chain broken");
        links.push(link);
        if before == 0 {
            break;
        }
        at = before;
    }
    links.reverse();
    let cost: f64 = links.iter().map(|&k| thresholds[k]).sum();

    // a link is tight when it lies on some optimal source-to-ground path
    let backward = dijkstra(graph, thresholds, GROUND);
    let slack = TIE_TOLERANCE * forward.ground.max(1.0);
    let dist_of = |dists: &Distances, v: usize| {
        if v == GROUND {
            dists.ground
        } else {
            dists.node[v]
        }
    };
    let mut tight = Vec::new();
    for link in graph.links() {
        let (a, b) = (vertex(link.tail), vertex(link.head));
        let through = (dist_of(&forward, a) + thresholds[link.id] + dist_of(&backward, b))
            .min(dist_of(&forward, b) + thresholds[link.id] + dist_of(&backward, a));
        if through <= forward.ground + slack {
            tight.push(link.id);
        }
    }
    let mut sorted_path = links.clone();
    sorted_path.sort_unstable();
    let unique = tight == sorted_path;

    Ok(PathResult {
        links,
        cost,
        unique,
    })
}

/// Places `+-d` along the path links, signed by the traversal direction, and
/// zero elsewhere. Conservation holds exactly: each interior path node sees
/// one inflow and one outflow of identical magnitude.
pub fn ideal_distribution(graph: &NetworkGraph, path: &PathResult, d: f64) -> IdealDistribution {
    let mut currents = DVector::zeros(graph.link_count());
    let mut at = Terminal::Node(0);
    for &k in &path.links {
        let link = graph.links()[k];
        if link.tail == at {
            currents[k] = d;
            at = link.head;
        } else {
            currents[k] = -d;
            at = link.tail;
        }
    }
    debug_assert!(at.is_ground(), "path must terminate at ground");
    let support = if d == 0.0 { Vec::new() } else { path.links.clone() };
    IdealDistribution { currents, support }
}

/// Minimum-cost flow LP of the sharp-threshold problem, solved by simplex
/// over split arcs (`u = u+ - u-`, both nonnegative) so that any fixed link
/// orientation is admissible. Desk-scale verification oracle.
pub fn lp_cross_check(
    graph: &NetworkGraph,
    thresholds: &[f64],
    d: f64,
) -> Result<f64, PathError> {
    check_thresholds(graph, thresholds)?;
    let n = graph.node_count();
    let m = graph.link_count();
    let cols = 2 * m;
    let mut a = vec![0.0; n * cols];
    for link in graph.links() {
        if let Terminal::Node(i) = link.tail {
            a[i * cols + link.id] = 1.0;
            a[i * cols + m + link.id] = -1.0;
        }
        if let Terminal::Node(j) = link.head {
            a[j * cols + link.id] = -1.0;
            a[j * cols + m + link.id] = 1.0;
        }
    }
    let mut b = vec![0.0; n];
    b[0] = d;
    let mut c = vec![0.0; cols];
    c[..m].copy_from_slice(thresholds);
    c[m..].copy_from_slice(thresholds);
    let sol = solve_equality_lp(&a, &b, &c, n, cols)?;
    // the recovered vertex must itself be a conservative flow
    debug_assert!({
        let u = DVector::from_fn(m, |k, _| sol.x[k] - sol.x[m + k]);
        let mut d_vec = DVector::zeros(n);
        d_vec[0] = d;
        (graph.divergence(&u) - d_vec).amax() < 1e-7
    });
    Ok(sol.cost)
}

/// Concentration metrics of a current vector against the sharp-limit path
/// flow: worst off-path magnitude, worst on-path deviation from `+-d`, and
/// the L1 distance to the ideal distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub max_off_path: f64,
    pub worst_off_link: Option<usize>,
    pub max_on_path_deviation: f64,
    pub worst_on_link: Option<usize>,
    pub l1_distance: f64,
    pub tolerance: f64,
    pub injected: f64,
    pub pass: bool,
}

impl ConcentrationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("pass={}\n", self.pass));
        s.push_str(&format!("tolerance={}\n", self.tolerance));
        s.push_str(&format!("injected={}\n", self.injected));
        s.push_str(&format!("max_off_path={:e}\n", self.max_off_path));
        s.push_str(&format!(
            "worst_off_link={}\n",
            self.worst_off_link.map_or(-1i64, |k| k as i64)
        ));
        s.push_str(&format!(
            "max_on_path_deviation={:e}\n",
            self.max_on_path_deviation
        ));
        s.push_str(&format!(
            "worst_on_link={}\n",
            self.worst_on_link.map_or(-1i64, |k| k as i64)
        ));
        s.push_str(&format!("l1_distance={:e}\n", self.l1_distance));
        s
    }
}

/// Compares `u` against the ideal path flow; passes when both the largest
/// off-path current and the largest on-path deviation are at most `tol * |d|`.
pub fn concentration_report(
    graph: &NetworkGraph,
    u: &DVector<f64>,
    path: &PathResult,
    d: f64,
    tol: f64,
) -> ConcentrationReport {
    let ideal = ideal_distribution(graph, path, d);
    let on_path: Vec<bool> = {
        let mut mask = vec![false; graph.link_count()];
        for &k in &path.links {
            mask[k] = true;
        }
        mask
    };
    let mut max_off = 0.0;
    let mut worst_off = None;
    let mut max_on = 0.0;
    let mut worst_on = None;
    let mut l1 = 0.0;
    for k in 0..graph.link_count() {
        let dev = (u[k] - ideal.currents[k]).abs();
        l1 += dev;
        if on_path[k] {
            if dev > max_on {
                max_on = dev;
                worst_on = Some(k);
            }
        } else if u[k].abs() > max_off {
            max_off = u[k].abs();
            worst_off = Some(k);
        }
    }
    let bound = tol * d.abs();
    ConcentrationReport {
        max_off_path: max_off,
        worst_off_link: worst_off,
        max_on_path_deviation: max_on,
        worst_on_link: worst_on,
        l1_distance: l1,
        tolerance: tol,
        injected: d,
        pass: max_off <= bound && max_on <= bound,
    }
}

/// One rung of the sharpness ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRung {
    pub plasma_conductivity: f64,
    pub l1_distance: f64,
}

/// Solves the steady state for piecewise characteristics of increasing
/// plasma conductivity over a fixed topology and rigidity draw, recording
/// the L1 distance to the sharp-limit path flow at each rung.
pub fn convergence_study(
    graph: &NetworkGraph,
    thresholds: &[f64],
    d: f64,
    plasma_ladder: &[f64],
    sub_conductivity: f64,
) -> Result<Vec<ConvergenceRung>, PathError> {
    check_thresholds(graph, thresholds)?;
    let path = min_threshold_path(graph, thresholds)?;
    let ideal = ideal_distribution(graph, &path, d);
    let profile = InjectionProfile::new(d);
    let mut out = Vec::with_capacity(plasma_ladder.len());
    for (rung, &plasma) in plasma_ladder.iter().enumerate() {
        let chars: Vec<LinkCharacteristic> = thresholds
            .iter()
            .map(|&v| LinkCharacteristic::piecewise(v, sub_conductivity, plasma))
            .collect();
        let sharpened = graph
            .with_characteristics(chars)
            .expect("threshold count already checked");
        let sol = solve_steady(&sharpened, &profile, &SolverControls::default()).map_err(
            |source| PathError::Rung {
                rung,
                plasma,
                source,
            },
        )?;
        let l1 = (sol.u_bar.clone() - &ideal.currents).abs().sum();
        out.push(ConvergenceRung {
            plasma_conductivity: plasma,
            l1_distance: l1,
        });
    }
    Ok(out)
}

/// Path export: one line with ordered node ids, link ids, and the cost.
pub fn path_text(graph: &NetworkGraph, path: &PathResult) -> String {
    let nodes: Vec<String> = path
        .nodes(graph)
        .into_iter()
        .map(|t| match t {
            Terminal::Node(i) => i.to_string(),
            Terminal::Ground => "ground".to_string(),
        })
        .collect();
    let links: Vec<String> = path.links.iter().map(|k| k.to_string()).collect();
    format!(
        "path cost={} unique={} nodes={} links={}\n",
        path.cost,
        path.unique,
        nodes.join(","),
        links.join(",")
    )
}
