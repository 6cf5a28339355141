//! Design graphs: nodes are canonical designs, edges join designs at
//! distance one, labeled with the coordinate that differs.
//!
//! The full graph is only materialized by [`DesignGraph::build`]; the
//! search works against [`NeighborSource`] so that candidate frontiers can
//! be expanded straight from a [`SpaceIndex`] without touching the rest of
//! the space.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::space::{Coord, SpaceIndex};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphError {
    UnknownNode(usize),
    OverlappingSets,
}

impl fmt::Display for GraphError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphError::UnknownNode(id) => write!(f, "node id {id} is out of range"),
            GraphError::OverlappingSets => {
                write!(f, "explored and candidate sets must be disjoint")
            }
        }
    }
}

/// Anything that can enumerate distance-one neighbors of a design id.
pub trait NeighborSource {
    fn node_count(&self) -> usize;
    fn for_each_neighbor(&self, node: usize, f: &mut dyn FnMut(usize, Coord));
}

impl NeighborSource for SpaceIndex {
    fn node_count(&self) -> usize {
        self.len()
    }

    fn for_each_neighbor(&self, node: usize, f: &mut dyn FnMut(usize, Coord)) {
        for (id, coord) in self.neighbors(node).expect("node id in range") {
            f(id, coord);
        }
    }
}

/// The materialized design graph in adjacency form.
#[derive(Debug, Clone)]
pub struct DesignGraph {
    node_count: usize,
    edges: Vec<(u32, u32, Coord)>,
    offsets: Vec<u32>,
    targets: Vec<u32>,
    labels: Vec<Coord>,
}

impl DesignGraph {
    /// Materialize the graph of a whole space.
    pub fn build(index: &SpaceIndex) -> DesignGraph {
        let n = index.len();
        let mut edges = Vec::new();
        for u in 0..n {
            for (v, coord) in index.neighbors(u).expect("id in range") {
                if v > u {
                    edges.push((u as u32, v as u32, coord));
                }
            }
        }
        Self::from_edges(n, edges)
    }

    /// Graph from an explicit undirected edge list (`u < v`, ids in range).
    /// Mostly useful for tests and synthetic fixtures.
    pub fn from_edges(node_count: usize, mut edges: Vec<(u32, u32, Coord)>) -> DesignGraph {
        edges.sort_unstable();
        for &(u, v, _) in &edges {
            assert!(u < v, "edges must be stored with u < v");
            assert!((v as usize) < node_count, "edge endpoint out of range");
        }
        let mut degree = vec![0u32; node_count];
        for &(u, v, _) in &edges {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = vec![0u32; node_count + 1];
        for i in 0..node_count {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut cursor: Vec<u32> = offsets[..node_count].to_vec();
        let mut targets = vec![0u32; edges.len() * 2];
        let mut labels = vec![Coord::Dim(0); edges.len() * 2];
        for &(u, v, c) in &edges {
            targets[cursor[u as usize] as usize] = v;
            labels[cursor[u as usize] as usize] = c;
            cursor[u as usize] += 1;
            targets[cursor[v as usize] as usize] = u;
            labels[cursor[v as usize] as usize] = c;
            cursor[v as usize] += 1;
        }
        DesignGraph { node_count, edges, offsets, targets, labels }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32, Coord)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = (usize, Coord)> + '_ {
        let lo = self.offsets[node] as usize;
        let hi = self.offsets[node + 1] as usize;
        self.targets[lo..hi]
            .iter()
            .zip(&self.labels[lo..hi])
            .map(|(&t, &c)| (t as usize, c))
    }

    pub fn degree(&self, node: usize) -> usize {
        (self.offsets[node + 1] - self.offsets[node]) as usize
    }

    /// Node counts, edge counts under both conventions, mean degree,
    /// diameter (`None` when disconnected) and component count.
    pub fn stats(&self) -> GraphStats {
        let n = self.node_count;
        let mut seen = vec![false; n];
        let mut components = 0usize;
        let mut queue = VecDeque::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            components += 1;
            seen[s] = true;
            queue.push_back(s as u32);
            while let Some(u) = queue.pop_front() {
                for (v, _) in self.neighbors(u as usize) {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v as u32);
                    }
                }
            }
        }
        let diameter = if components == 1 { Some(self.exact_diameter()) } else { None };
        GraphStats {
            node_count: n,
            undirected_edge_count: self.edges.len(),
            directed_edge_count: self.edges.len() * 2,
            mean_degree: if n == 0 { 0.0 } else { 2.0 * self.edges.len() as f64 / n as f64 },
            diameter,
            component_count: components,
        }
    }

    fn bfs_into(&self, start: usize, dist: &mut [u32]) -> (usize, u32) {
        dist.fill(u32::MAX);
        dist[start] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(start as u32);
        let mut far = (start, 0u32);
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize];
            if du > far.1 {
                far = (u as usize, du);
            }
            for (v, _) in self.neighbors(u as usize) {
                if dist[v] == u32::MAX {
                    dist[v] = du + 1;
                    queue.push_back(v as u32);
                }
            }
        }
        far
    }

    /// Exact diameter of a connected graph: a double sweep for the lower
    /// bound, then fringe-by-fringe eccentricities from a sweep midpoint
    /// until the remaining levels cannot beat the bound.
    fn exact_diameter(&self) -> u32 {
        let n = self.node_count;
        if n <= 1 {
            return 0;
        }
        let mut dist = vec![u32::MAX; n];
        let (a, _) = self.bfs_into(0, &mut dist);
        let mut from_a = vec![u32::MAX; n];
        let (b, ecc_a) = self.bfs_into(a, &mut from_a);
        let mut lb = ecc_a;

        // Midpoint of the a-b path: any node halfway between them.
        let mut from_b = vec![u32::MAX; n];
        self.bfs_into(b, &mut from_b);
        let half = ecc_a / 2;
        let root = (0..n)
            .find(|&v| from_a[v] == half && from_a[v] + from_b[v] == ecc_a)
            .unwrap_or(a);

        let (_, ecc_root) = self.bfs_into(root, &mut dist);
        lb = lb.max(ecc_root);
        let mut fringe: Vec<Vec<u32>> = vec![Vec::new(); ecc_root as usize + 1];
        for v in 0..n {
            fringe[dist[v] as usize].push(v as u32);
        }
        let mut scratch = vec![u32::MAX; n];
        for i in (1..=ecc_root).rev() {
            // Any pair of nodes both at levels <= i sits within 2i of each
            // other via the root, so once lb reaches 2i no deeper fringe is
            // needed. The check is only valid between whole levels.
            if lb >= 2 * i {
                break;
            }
            for &v in &fringe[i as usize] {
                let (_, ecc) = self.bfs_into(v as usize, &mut scratch);
                lb = lb.max(ecc);
            }
        }
        lb
    }
}

impl NeighborSource for DesignGraph {
    fn node_count(&self) -> usize {
        self.node_count
    }

    fn for_each_neighbor(&self, node: usize, f: &mut dyn FnMut(usize, Coord)) {
        for (v, c) in self.neighbors(node) {
            f(v, c);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStats {
    pub node_count: usize,
    pub undirected_edge_count: usize,
    pub directed_edge_count: usize,
    pub mean_degree: f64,
    pub diameter: Option<u32>,
    pub component_count: usize,
}

/// All nodes within `hops` steps of the seed set, excluding the seeds.
pub fn multi_hop_neighbors(
    source: &dyn NeighborSource,
    seeds: &BTreeSet<usize>,
    hops: usize,
) -> Result<BTreeSet<usize>, GraphError> {
    let n = source.node_count();
    for &s in seeds {
        if s >= n {
            return Err(GraphError::UnknownNode(s));
        }
    }
    let mut found = BTreeSet::new();
    let mut frontier: BTreeSet<usize> = seeds.clone();
    let mut visited: BTreeSet<usize> = seeds.clone();
    for _ in 0..hops {
        let mut next = BTreeSet::new();
        for &u in &frontier {
            source.for_each_neighbor(u, &mut |v, _| {
                if visited.insert(v) {
                    next.insert(v);
                    found.insert(v);
                }
            });
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(found)
}

/// The subgraph induced on explored plus candidate designs. Nodes are kept
/// in ascending id order; edges use local indices with `u < v`.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub nodes: Vec<usize>,
    pub explored: Vec<bool>,
    pub edges: Vec<(u32, u32, Coord)>,
}

impl Subgraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn local(&self, global: usize) -> Option<usize> {
        self.nodes.binary_search(&global).ok()
    }
}

/// Build the induced subgraph over two disjoint node sets.
pub fn build_subgraph(
    source: &dyn NeighborSource,
    explored: &BTreeSet<usize>,
    candidates: &BTreeSet<usize>,
) -> Result<Subgraph, GraphError> {
    if explored.intersection(candidates).next().is_some() {
        return Err(GraphError::OverlappingSets);
    }
    let n = source.node_count();
    let mut nodes: Vec<usize> = explored.iter().chain(candidates.iter()).copied().collect();
    nodes.sort_unstable();
    if let Some(&bad) = nodes.iter().find(|&&v| v >= n) {
        return Err(GraphError::UnknownNode(bad));
    }
    let explored_mask: Vec<bool> = nodes.iter().map(|v| explored.contains(v)).collect();
    let mut edges = Vec::new();
    for (lu, &u) in nodes.iter().enumerate() {
        source.for_each_neighbor(u, &mut |v, coord| {
            if let Ok(lv) = nodes.binary_search(&v) {
                if lv > lu {
                    edges.push((lu as u32, lv as u32, coord));
                }
            }
        });
    }
    edges.sort_unstable();
    Ok(Subgraph { nodes, explored: explored_mask, edges })
}
