//! Shared test oracles, independent of the library's solver paths.

use discharge_core::experiment::{draw_thresholds, ExperimentConfig};
use discharge_core::network::{build_grid, NetworkGraph, Terminal};
use discharge_core::LinkCharacteristic;

/// Exhaustive minimum-cost source-to-ground path by depth-first enumeration
/// of every simple path. Usable only on small graphs.
pub fn enumerate_min_path(graph: &NetworkGraph, thresholds: &[f64]) -> Option<(f64, Vec<usize>)> {
    let n = graph.node_count();
    let ground = n;
    let vert = |t: Terminal| t.node().unwrap_or(ground);
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + 1];
    for link in graph.links() {
        let (a, b) = (vert(link.tail), vert(link.head));
        adjacency[a].push((link.id, b));
        adjacency[b].push((link.id, a));
    }

    fn dfs(
        at: usize,
        cost: f64,
        ground: usize,
        adjacency: &[Vec<(usize, usize)>],
        thresholds: &[f64],
        visited: &mut [bool],
        trail: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if at == ground {
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                *best = Some((cost, trail.clone()));
            }
            return;
        }
        visited[at] = true;
        for &(link, next) in &adjacency[at] {
            if next != ground && visited[next] {
                continue;
            }
            trail.push(link);
            dfs(
                next,
                cost + thresholds[link],
                ground,
                adjacency,
                thresholds,
                visited,
                trail,
                best,
            );
            trail.pop();
        }
        visited[at] = false;
    }

    let mut best = None;
    let mut visited = vec![false; n + 1];
    let mut trail = Vec::new();
    dfs(
        0,
        0.0,
        ground,
        &adjacency,
        thresholds,
        &mut visited,
        &mut trail,
        &mut best,
    );
    best
}

/// Seeded piecewise-threshold grid with its rigidity draw.
pub fn pwl_grid(
    rows: usize,
    cols: usize,
    delta: f64,
    seed: u64,
    sub_conductivity: f64,
    plasma_conductivity: f64,
) -> (NetworkGraph, Vec<f64>) {
    let grid = build_grid(rows, cols).unwrap();
    let config = ExperimentConfig {
        rows,
        cols,
        delta,
        seed,
        ..Default::default()
    };
    let thresholds = draw_thresholds(&config, grid.link_count()).unwrap();
    let chars: Vec<LinkCharacteristic> = thresholds
        .iter()
        .map(|&v| LinkCharacteristic::piecewise(v, sub_conductivity, plasma_conductivity))
        .collect();
    (grid.with_characteristics(chars).unwrap(), thresholds)
}
