//! Network graphs: grids and arbitrary topologies, the reduced node-link
//! incidence matrix, ground collapsing, and grounded conductive objects.
//!
//! All grounded terminals are collapsed into a single sentinel ground that
//! carries no incidence row; node 0 is always the injection node.

use std::collections::VecDeque;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::characteristic::{CharacteristicError, LinkCharacteristic};

pub type NodeId = usize;

/// Endpoint of a link: an internal node or the collapsed ground.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    Node(NodeId),
    Ground,
}

impl Terminal {
    pub fn node(self) -> Option<NodeId> {
        match self {
            Terminal::Node(i) => Some(i),
            Terminal::Ground => None,
        }
    }

    pub fn is_ground(self) -> bool {
        matches!(self, Terminal::Ground)
    }
}

/// Directed link; the orientation is arbitrary but fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub id: usize,
    pub tail: Terminal,
    pub head: Terminal,
}

/// Everything needed to add one link to a graph under construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub tail: Terminal,
    pub head: Terminal,
    pub capacitance: f64,
    pub characteristic: LinkCharacteristic,
}

impl LinkSpec {
    pub fn new(tail: Terminal, head: Terminal, characteristic: LinkCharacteristic) -> Self {
        LinkSpec {
            tail,
            head,
            capacitance: 1.0,
            characteristic,
        }
    }

    pub fn with_capacitance(mut self, capacitance: f64) -> Self {
        self.capacitance = capacitance;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("grid dimensions must be positive, got {rows}x{cols}")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("source position ({row}, {col}) outside a {rows}x{cols} grid")]
    SourceOutsideGrid {
        rows: usize,
        cols: usize,
        row: usize,
        col: usize,
    },
    #[error("graph must have at least one node and one link")]
    Empty,
    #[error("link {link} references node {node} but the graph has {nodes} nodes")]
    NodeOutOfRange {
        link: usize,
        node: NodeId,
        nodes: usize,
    },
    #[error("link {0} is a self-loop")]
    SelfLoop(usize),
    #[error("link {0} connects ground to ground")]
    GroundToGround(usize),
    #[error("link {link} has non-positive capacitance {value}")]
    BadCapacitance { link: usize, value: f64 },
    #[error("link {link}: {source}")]
    BadCharacteristic {
        link: usize,
        source: CharacteristicError,
    },
    #[error("node {0} cannot reach ground")]
    Disconnected(NodeId),
    #[error("object node {0} is out of range")]
    ObjectNodeOutOfRange(NodeId),
    #[error("expected {expected} per-link values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Immutable nonlinear RC network over a graph with a collapsed ground.
///
/// The reduced incidence matrix has one row per internal node and one column
/// per link: +1 at the tail row, -1 at the head row, and a single entry for
/// links touching ground. It is built lazily and cached; all hot-path
/// operations work from the link list directly.
#[derive(Debug)]
pub struct NetworkGraph {
    node_count: usize,
    links: Vec<Link>,
    capacitances: Vec<f64>,
    characteristics: Vec<LinkCharacteristic>,
    /// Row/column placement per node, kept for frame rendering only.
    positions: Option<Vec<(usize, usize)>>,
    grid_dims: Option<(usize, usize)>,
    incidence: OnceLock<DMatrix<f64>>,
}

impl Clone for NetworkGraph {
    fn clone(&self) -> Self {
        NetworkGraph {
            node_count: self.node_count,
            links: self.links.clone(),
            capacitances: self.capacitances.clone(),
            characteristics: self.characteristics.clone(),
            positions: self.positions.clone(),
            grid_dims: self.grid_dims,
            incidence: OnceLock::new(),
        }
    }
}

impl PartialEq for NetworkGraph {
    fn eq(&self, other: &Self) -> bool {
        self.node_count == other.node_count
            && self.links == other.links
            && self.capacitances == other.capacitances
            && self.characteristics == other.characteristics
            && self.positions == other.positions
            && self.grid_dims == other.grid_dims
    }
}

impl NetworkGraph {
    pub fn new(node_count: usize, specs: Vec<LinkSpec>) -> Result<Self, NetworkError> {
        Self::with_layout(node_count, specs, None, None)
    }

    pub fn with_layout(
        node_count: usize,
        specs: Vec<LinkSpec>,
        positions: Option<Vec<(usize, usize)>>,
        grid_dims: Option<(usize, usize)>,
    ) -> Result<Self, NetworkError> {
        if node_count == 0 || specs.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut links = Vec::with_capacity(specs.len());
        let mut capacitances = Vec::with_capacity(specs.len());
        let mut characteristics = Vec::with_capacity(specs.len());
        for (id, spec) in specs.into_iter().enumerate() {
            for t in [spec.tail, spec.head] {
                if let Terminal::Node(i) = t {
                    if i >= node_count {
                        return Err(NetworkError::NodeOutOfRange {
                            link: id,
                            node: i,
                            nodes: node_count,
                        });
                    }
                }
            }
            match (spec.tail, spec.head) {
                (Terminal::Ground, Terminal::Ground) => {
                    return Err(NetworkError::GroundToGround(id))
                }
                (Terminal::Node(a), Terminal::Node(b)) if a == b => {
                    return Err(NetworkError::SelfLoop(id))
                }
                _ => {}
            }
            if !(spec.capacitance.is_finite() && spec.capacitance > 0.0) {
                return Err(NetworkError::BadCapacitance {
                    link: id,
                    value: spec.capacitance,
                });
            }
            spec.characteristic
                .validate()
                .map_err(|source| NetworkError::BadCharacteristic { link: id, source })?;
            links.push(Link {
                id,
                tail: spec.tail,
                head: spec.head,
            });
            capacitances.push(spec.capacitance);
            characteristics.push(spec.characteristic);
        }
        let graph = NetworkGraph {
            node_count,
            links,
            capacitances,
            characteristics,
            positions,
            grid_dims,
            incidence: OnceLock::new(),
        };
        graph.check_connected()?;
        Ok(graph)
    }

    /// Every node must reach ground through some link sequence.
    fn check_connected(&self) -> Result<(), NetworkError> {
        let mut seen = vec![false; self.node_count];
        let mut queue: VecDeque<NodeId> = VecDeque::new();
        for link in &self.links {
            if let (Some(i), true) = (link.tail.node(), link.head.is_ground()) {
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
            if let (true, Some(i)) = (link.tail.is_ground(), link.head.node()) {
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
        while let Some(i) = queue.pop_front() {
            for link in &self.links {
                if let (Terminal::Node(a), Terminal::Node(b)) = (link.tail, link.head) {
                    let other = if a == i {
                        Some(b)
                    } else if b == i {
                        Some(a)
                    } else {
                        None
                    };
                    if let Some(j) = other {
                        if !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(NetworkError::Disconnected(i)),
            None => Ok(()),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn capacitances(&self) -> &[f64] {
        &self.capacitances
    }

    pub fn characteristics(&self) -> &[LinkCharacteristic] {
        &self.characteristics
    }

    pub fn positions(&self) -> Option<&[(usize, usize)]> {
        self.positions.as_deref()
    }

    pub fn grid_dims(&self) -> Option<(usize, usize)> {
        self.grid_dims
    }

    pub fn all_evaluable(&self) -> bool {
        self.characteristics.iter().all(|c| c.is_evaluable())
    }

    pub fn all_linear(&self) -> bool {
        self.characteristics.iter().all(|c| c.is_linear())
    }

    /// Same topology and capacitances with replaced per-link characteristics.
    pub fn with_characteristics(
        &self,
        characteristics: Vec<LinkCharacteristic>,
    ) -> Result<NetworkGraph, NetworkError> {
        if characteristics.len() != self.links.len() {
            return Err(NetworkError::LengthMismatch {
                expected: self.links.len(),
                got: characteristics.len(),
            });
        }
        for (k, c) in characteristics.iter().enumerate() {
            c.validate()
                .map_err(|source| NetworkError::BadCharacteristic { link: k, source })?;
        }
        Ok(NetworkGraph {
            node_count: self.node_count,
            links: self.links.clone(),
            capacitances: self.capacitances.clone(),
            characteristics,
            positions: self.positions.clone(),
            grid_dims: self.grid_dims,
            incidence: OnceLock::new(),
        })
    }

    /// Same topology and characteristics with every capacitance scaled.
    pub fn with_scaled_capacitances(&self, factor: f64) -> Result<NetworkGraph, NetworkError> {
        let mut out = self.clone();
        for (k, c) in out.capacitances.iter_mut().enumerate() {
            *c *= factor;
            if !(c.is_finite() && *c > 0.0) {
                return Err(NetworkError::BadCapacitance { link: k, value: *c });
            }
        }
        Ok(out)
    }

    /// Reduced incidence matrix, built on first use and cached.
    pub fn incidence(&self) -> &DMatrix<f64> {
        self.incidence.get_or_init(|| {
            let mut b = DMatrix::zeros(self.node_count, self.links.len());
            for link in &self.links {
                if let Terminal::Node(i) = link.tail {
                    b[(i, link.id)] = 1.0;
                }
                if let Terminal::Node(j) = link.head {
                    b[(j, link.id)] = -1.0;
                }
            }
            b
        })
    }

    /// Per-link voltage drops `tail - head` (ground potential is zero).
    pub fn voltage_drops(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.links.len(), |k, _| {
            let link = self.links[k];
            let vt = link.tail.node().map_or(0.0, |i| v[i]);
            let vh = link.head.node().map_or(0.0, |j| v[j]);
            vt - vh
        })
    }

    /// Per-node net outflow of a link-current vector (the product `B u`).
    pub fn divergence(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.node_count);
        for link in &self.links {
            if let Terminal::Node(i) = link.tail {
                out[i] += u[link.id];
            }
            if let Terminal::Node(j) = link.head {
                out[j] -= u[link.id];
            }
        }
        out
    }

    /// Assembles `B diag(w) B^T` directly from the link list.
    pub fn weighted_laplacian(&self, weights: &[f64]) -> DMatrix<f64> {
        assert_eq!(weights.len(), self.links.len());
        let mut m = DMatrix::zeros(self.node_count, self.node_count);
        for link in &self.links {
            let w = weights[link.id];
            match (link.tail, link.head) {
                (Terminal::Node(i), Terminal::Node(j)) => {
                    m[(i, i)] += w;
                    m[(j, j)] += w;
                    m[(i, j)] -= w;
                    m[(j, i)] -= w;
                }
                (Terminal::Node(i), Terminal::Ground) | (Terminal::Ground, Terminal::Node(i)) => {
                    m[(i, i)] += w;
                }
                (Terminal::Ground, Terminal::Ground) => unreachable!(),
            }
        }
        m
    }

    /// Capacitance matrix `B C B^T` of the dynamic model.
    pub fn mass_matrix(&self) -> DMatrix<f64> {
        self.weighted_laplacian(&self.capacitances)
    }

    /// Fundamental cycle basis of the flow null space (`B z = 0`), built
    /// from a spanning tree with the ground treated as an ordinary vertex.
    /// Entries of each basis vector are in {-1, 0, +1}.
    pub fn cycle_basis(&self) -> Vec<DVector<f64>> {
        let n = self.node_count;
        let ground = n; // vertex index for the collapsed ground
        let vert = |t: Terminal| t.node().unwrap_or(ground);

        // parent[v] = (parent vertex, link id, +1 if the link is oriented v -> parent)
        let mut parent: Vec<Option<(usize, usize, f64)>> = vec![None; n + 1];
        let mut in_tree = vec![false; self.links.len()];
        let mut seen = vec![false; n + 1];
        seen[ground] = true;
        let mut queue = VecDeque::from([ground]);
        while let Some(x) = queue.pop_front() {
            for link in &self.links {
                let (a, b) = (vert(link.tail), vert(link.head));
                let next = if a == x {
                    Some((b, 1.0))
                } else if b == x {
                    Some((a, -1.0))
                } else {
                    None
                };
                // sign +1 when the link is oriented child -> x
                if let Some((y, toward_x)) = next {
                    if !seen[y] {
                        seen[y] = true;
                        in_tree[link.id] = true;
                        parent[y] = Some((x, link.id, -toward_x));
                        queue.push_back(y);
                    }
                }
            }
        }

        let mut basis = Vec::new();
        for link in &self.links {
            if in_tree[link.id] {
                continue;
            }
            let mut z = DVector::zeros(self.links.len());
            z[link.id] = 1.0;
            // close the cycle through the tree: head up to the root with +,
            // tail up to the root with -; the shared segment cancels exactly.
            for (start, sign) in [(vert(link.head), 1.0), (vert(link.tail), -1.0)] {
                let mut x = start;
                while let Some((p, l, dir)) = parent[x] {
                    z[l] += sign * dir;
                    x = p;
                }
            }
            basis.push(z);
        }
        basis
    }

    /// Adds low-resistance, high-capacitance links along `object_nodes` and
    /// from the last object node to ground, modeling a grounded conductor.
    /// An empty node list returns the graph unchanged.
    pub fn attach_grounded_object(
        &self,
        object_nodes: &[NodeId],
        resistance: f64,
        capacitance: f64,
    ) -> Result<NetworkGraph, NetworkError> {
        if object_nodes.is_empty() {
            return Ok(self.clone());
        }
        for &i in object_nodes {
            if i >= self.node_count {
                return Err(NetworkError::ObjectNodeOutOfRange(i));
            }
        }
        let conductor = LinkCharacteristic::linear(resistance);
        conductor
            .validate()
            .map_err(|source| NetworkError::BadCharacteristic {
                link: self.links.len(),
                source,
            })?;
        let mut out = self.clone();
        let push = |g: &mut NetworkGraph, tail: Terminal, head: Terminal| {
            let id = g.links.len();
            g.links.push(Link { id, tail, head });
            g.capacitances.push(capacitance);
            g.characteristics.push(conductor);
        };
        for pair in object_nodes.windows(2) {
            push(&mut out, Terminal::Node(pair[0]), Terminal::Node(pair[1]));
        }
        push(
            &mut out,
            Terminal::Node(object_nodes[object_nodes.len() - 1]),
            Terminal::Ground,
        );
        if !(capacitance.is_finite() && capacitance > 0.0) {
            return Err(NetworkError::BadCapacitance {
                link: self.links.len(),
                value: capacitance,
            });
        }
        out.incidence = OnceLock::new();
        Ok(out)
    }
}

/// Rectangular grid with the source at the top-row center.
///
/// Internal nodes form a 4-neighbor lattice; every bottom-row node gets one
/// extra link straight to the collapsed ground. Capacitances default to 1 and
/// every link starts with a unit linear characteristic (callers swap in the
/// laws they need).
pub fn build_grid(rows: usize, cols: usize) -> Result<NetworkGraph, NetworkError> {
    build_grid_with_source(rows, cols, 0, (cols.max(1) - 1) / 2)
}

/// Grid constructor with an explicit source cell.
///
/// Node ids: the source cell is node 0, remaining cells follow in row-major
/// order. Internal links are oriented away from the source by breadth-first
/// depth (ties go from the smaller node id to the larger); ground links are
/// oriented node to ground.
pub fn build_grid_with_source(
    rows: usize,
    cols: usize,
    source_row: usize,
    source_col: usize,
) -> Result<NetworkGraph, NetworkError> {
    if rows == 0 || cols == 0 {
        return Err(NetworkError::EmptyGrid { rows, cols });
    }
    if source_row >= rows || source_col >= cols {
        return Err(NetworkError::SourceOutsideGrid {
            rows,
            cols,
            row: source_row,
            col: source_col,
        });
    }
    let cell = |r: usize, c: usize| r * cols + c;
    let source_cell = cell(source_row, source_col);
    let n = rows * cols;
    // Source cell becomes node 0; everything else keeps row-major order.
    let mut node_of_cell = vec![0usize; n];
    let mut next = 1;
    for idx in 0..n {
        if idx != source_cell {
            node_of_cell[idx] = next;
            next += 1;
        }
    }
    let mut positions = vec![(0usize, 0usize); n];
    for r in 0..rows {
        for c in 0..cols {
            positions[node_of_cell[cell(r, c)]] = (r, c);
        }
    }

    // Undirected neighbor pairs in a fixed enumeration order: for each cell,
    // right neighbor then down neighbor; ground links after all internal ones.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                pairs.push((node_of_cell[cell(r, c)], node_of_cell[cell(r, c + 1)]));
            }
            if r + 1 < rows {
                pairs.push((node_of_cell[cell(r, c)], node_of_cell[cell(r + 1, c)]));
            }
        }
    }

    // Breadth-first depth from the source over the lattice.
    let mut depth = vec![usize::MAX; n];
    depth[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in &pairs {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }
    while let Some(x) = queue.pop_front() {
        for &y in &adjacency[x] {
            if depth[y] == usize::MAX {
                depth[y] = depth[x] + 1;
                queue.push_back(y);
            }
        }
    }

    let default_char = LinkCharacteristic::linear(1.0);
    let mut specs: Vec<LinkSpec> = pairs
        .into_iter()
        .map(|(a, b)| {
            let away = (depth[a], a) <= (depth[b], b);
            let (tail, head) = if away { (a, b) } else { (b, a) };
            LinkSpec::new(Terminal::Node(tail), Terminal::Node(head), default_char)
        })
        .collect();
    for c in 0..cols {
        specs.push(LinkSpec::new(
            Terminal::Node(node_of_cell[cell(rows - 1, c)]),
            Terminal::Ground,
            default_char,
        ));
    }

    NetworkGraph::with_layout(n, specs, Some(positions), Some((rows, cols)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_grid_is_one_node_one_ground_link() {
        let g = build_grid(1, 1).unwrap();
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.link_count(), 1);
        let b = g.incidence();
        assert_eq!((b.nrows(), b.ncols()), (1, 1));
        assert_eq!(b[(0, 0)], 1.0);
    }

    #[test]
    fn two_by_two_grid_counts() {
        let g = build_grid(2, 2).unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.link_count(), 6);
        let ground_links = g
            .links()
            .iter()
            .filter(|l| l.head.is_ground() || l.tail.is_ground())
            .count();
        assert_eq!(ground_links, 2);
    }

    #[test]
    fn three_by_three_grid_has_full_rank_incidence() {
        let g = build_grid(3, 3).unwrap();
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.link_count(), 15);
        // independent dense check
        assert_eq!(g.incidence().clone().rank(1e-9), 9);
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(matches!(
            build_grid(0, 3),
            Err(NetworkError::EmptyGrid { .. })
        ));
        assert!(matches!(
            build_grid(3, 0),
            Err(NetworkError::EmptyGrid { .. })
        ));
    }

    #[test]
    fn incidence_columns_for_ground_links() {
        let to_ground = NetworkGraph::new(
            1,
            vec![LinkSpec::new(
                Terminal::Node(0),
                Terminal::Ground,
                LinkCharacteristic::linear(1.0),
            )],
        )
        .unwrap();
        assert_eq!(to_ground.incidence()[(0, 0)], 1.0);

        let from_ground = NetworkGraph::new(
            1,
            vec![LinkSpec::new(
                Terminal::Ground,
                Terminal::Node(0),
                LinkCharacteristic::linear(1.0),
            )],
        )
        .unwrap();
        assert_eq!(from_ground.incidence()[(0, 0)], -1.0);
    }

    #[test]
    fn incidence_column_sums_split_by_link_kind() {
        let g = build_grid(2, 2).unwrap();
        let b = g.incidence();
        for link in g.links() {
            let sum: f64 = b.column(link.id).iter().sum();
            let grounded = link.tail.is_ground() || link.head.is_ground();
            if grounded {
                assert_eq!(sum.abs(), 1.0);
            } else {
                assert_eq!(sum, 0.0);
            }
            let nonzeros = b.column(link.id).iter().filter(|x| **x != 0.0).count();
            assert_eq!(nonzeros, if grounded { 1 } else { 2 });
        }
    }

    #[test]
    fn grids_up_to_fifty_nodes_have_full_rank() {
        for (rows, cols) in [(1, 5), (2, 3), (4, 4), (5, 5), (7, 7), (5, 10)] {
            let g = build_grid(rows, cols).unwrap();
            assert_eq!(
                g.incidence().clone().rank(1e-9),
                g.node_count(),
                "{rows}x{cols}"
            );
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = build_grid(4, 5).unwrap();
        let b = build_grid(4, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.incidence(), b.incidence());
    }

    #[test]
    fn source_is_top_center() {
        let g = build_grid(3, 3).unwrap();
        assert_eq!(g.positions().unwrap()[0], (0, 1));
    }

    #[test]
    fn validation_rejects_bad_links() {
        let lin = LinkCharacteristic::linear(1.0);
        let self_loop = NetworkGraph::new(
            2,
            vec![
                LinkSpec::new(Terminal::Node(0), Terminal::Node(0), lin),
                LinkSpec::new(Terminal::Node(0), Terminal::Ground, lin),
            ],
        );
        assert!(matches!(self_loop, Err(NetworkError::SelfLoop(0))));

        let out_of_range = NetworkGraph::new(
            1,
            vec![LinkSpec::new(Terminal::Node(3), Terminal::Ground, lin)],
        );
        assert!(matches!(
            out_of_range,
            Err(NetworkError::NodeOutOfRange { .. })
        ));

        let disconnected = NetworkGraph::new(
            2,
            vec![LinkSpec::new(Terminal::Node(0), Terminal::Ground, lin)],
        );
        assert!(matches!(disconnected, Err(NetworkError::Disconnected(1))));
    }

    #[test]
    fn grounded_object_with_empty_list_is_identity() {
        let g = build_grid(3, 3).unwrap();
        let same = g.attach_grounded_object(&[], 1e-6, 1e3).unwrap();
        assert_eq!(g, same);
    }

    #[test]
    fn grounded_object_adds_conductor_links() {
        let g = build_grid(3, 3).unwrap();
        let m0 = g.link_count();
        let bottom_left = g
            .positions()
            .unwrap()
            .iter()
            .position(|&p| p == (2, 0))
            .unwrap();
        let with_object = g.attach_grounded_object(&[bottom_left], 1e-6, 1e3).unwrap();
        assert_eq!(with_object.link_count(), m0 + 1);
        let added = with_object.links()[m0];
        assert_eq!(added.tail, Terminal::Node(bottom_left));
        assert_eq!(added.head, Terminal::Ground);
        assert_eq!(with_object.capacitances()[m0], 1e3);
        assert_eq!(
            with_object.characteristics()[m0],
            LinkCharacteristic::linear(1e-6)
        );
    }

    #[test]
    fn grounded_object_rejects_bad_nodes() {
        let g = build_grid(2, 2).unwrap();
        assert!(matches!(
            g.attach_grounded_object(&[99], 1e-6, 1e3),
            Err(NetworkError::ObjectNodeOutOfRange(99))
        ));
    }

    #[test]
    fn cycle_basis_spans_the_null_space() {
        let g = build_grid(3, 4).unwrap();
        let basis = g.cycle_basis();
        assert_eq!(basis.len(), g.link_count() - g.node_count());
        for z in &basis {
            let bz = g.divergence(z);
            assert_eq!(bz.amax(), 0.0, "cycle must be exactly conservative");
        }
    }

    #[test]
    fn divergence_matches_dense_incidence_product() {
        let g = build_grid(3, 3).unwrap();
        let u = DVector::from_fn(g.link_count(), |k, _| (k as f64 * 0.37).sin());
        let dense = g.incidence() * &u;
        assert!((g.divergence(&u) - dense).amax() < 1e-14);
    }

    #[test]
    fn drops_match_dense_transpose_product() {
        let g = build_grid(3, 3).unwrap();
        let v = DVector::from_fn(g.node_count(), |i, _| (i as f64 * 0.61).cos());
        let dense = g.incidence().transpose() * &v;
        assert!((g.voltage_drops(&v) - dense).amax() < 1e-14);
    }

    #[test]
    fn weighted_laplacian_matches_triple_product() {
        let g = build_grid(2, 3).unwrap();
        let w: Vec<f64> = (0..g.link_count()).map(|k| 0.5 + k as f64 * 0.1).collect();
        let b = g.incidence();
        let dense = b * DMatrix::from_diagonal(&DVector::from_vec(w.clone())) * b.transpose();
        assert!((g.weighted_laplacian(&w) - dense).amax() < 1e-12);
    }
}
