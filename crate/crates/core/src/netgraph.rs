//! Weighted directed contact networks.
//!
//! Edges are stored in flow direction `src -> dst`. The adjacency matrix uses
//! the destination-row convention: `A[(dst, src)]` holds the weight of the
//! edge `src -> dst`, so row `i` of `A` collects the in-neighbours of node `i`.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("edge {src}->{dst} has non-positive or non-finite weight {weight}")]
    BadWeight { src: usize, dst: usize, weight: f64 },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {src}->{dst}")]
    DuplicateEdge { src: usize, dst: usize },
    #[error("edge {src}->{dst} references a node outside 0..{n}")]
    NodeOutOfRange { src: usize, dst: usize, n: usize },
    #[error("networks need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("requested {requested} extra edges but only {available} slots are free")]
    TooManyExtraEdges { requested: usize, available: usize },
    #[error("invalid generator parameter: {0}")]
    BadParameter(String),
    #[error("expected {expected} labels, got {got}")]
    LabelCount { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// A validated weighted digraph with positive weights, no self-loops and no
/// parallel edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactNetwork {
    n: usize,
    edges: Vec<Edge>,
    labels: Option<Vec<String>>,
}

impl ContactNetwork {
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let mut seen = HashSet::with_capacity(edges.len());
        for e in &edges {
            if e.src == e.dst {
                return Err(GraphError::SelfLoop(e.src));
            }
            if e.src >= n || e.dst >= n {
                return Err(GraphError::NodeOutOfRange { src: e.src, dst: e.dst, n });
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(GraphError::BadWeight { src: e.src, dst: e.dst, weight: e.weight });
            }
            if !seen.insert((e.src, e.dst)) {
                return Err(GraphError::DuplicateEdge { src: e.src, dst: e.dst });
            }
        }
        if n < 2 {
            return Err(GraphError::TooFewNodes(n));
        }
        Ok(Self { n, edges, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, GraphError> {
        if labels.len() != self.n {
            return Err(GraphError::LabelCount { expected: self.n, got: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.weight).collect()
    }

    /// `A[(i, j)]` is the weight of the edge `j -> i`.
    /// Same topology with new edge weights, in edge order.
    pub fn reweighted(&self, weights: &[f64]) -> Result<ContactNetwork, GraphError> {
        if weights.len() != self.edges.len() {
            return Err(GraphError::BadParameter(format!(
                "expected {} weights, got {}",
                self.edges.len(),
                weights.len()
            )));
        }
        let edges = self
            .edges
            .iter()
            .zip(weights)
            .map(|(e, &weight)| Edge { weight, ..*e })
            .collect();
        let mut net = ContactNetwork::new(self.n, edges)?;
        net.labels = self.labels.clone();
        Ok(net)
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            a[(e.dst, e.src)] = e.weight;
        }
        a
    }

    /// Adjacency with the per-edge weights replaced by `weights` (same order as
    /// [`ContactNetwork::edges`]).
    pub fn adjacency_with(&self, weights: &[f64]) -> DMatrix<f64> {
        assert_eq!(weights.len(), self.edges.len(), "one weight per edge");
        let mut a = DMatrix::zeros(self.n, self.n);
        for (e, &w) in self.edges.iter().zip(weights) {
            a[(e.dst, e.src)] = w;
        }
        a
    }

    /// Edge indices grouped by destination node.
    pub fn in_edges(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.n];
        for (k, e) in self.edges.iter().enumerate() {
            inc[e.dst].push(k);
        }
        inc
    }

    pub fn is_strongly_connected(&self) -> bool {
        let mut fwd = vec![Vec::new(); self.n];
        let mut bwd = vec![Vec::new(); self.n];
        for e in &self.edges {
            fwd[e.src].push(e.dst);
            bwd[e.dst].push(e.src);
        }
        reaches_all(&fwd) && reaches_all(&bwd)
    }

    pub fn save_edgelist(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        std::fs::write(path, self.to_edgelist_string())?;
        Ok(())
    }

    pub fn to_edgelist_string(&self) -> String {
        let mut out = String::from("src,dst,weight\n");
        for e in &self.edges {
            // `{}` on f64 prints the shortest representation that parses back exactly.
            let _ = writeln!(out, "{},{},{}", e.src, e.dst, e.weight);
        }
        out
    }
}

/// True if every node is reachable from node 0 in `adj`.
fn reaches_all(adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == adj.len()
}

pub fn load_edgelist(path: impl AsRef<Path>) -> Result<ContactNetwork, GraphError> {
    let text = std::fs::read_to_string(path)?;
    parse_edgelist(&text)
}

/// Parses `src,dst,weight` rows. `#` lines and an optional header are skipped;
/// the node count is one past the largest index seen.
pub fn parse_edgelist(text: &str) -> Result<ContactNetwork, GraphError> {
    let mut edges = Vec::new();
    let mut max_index = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(GraphError::Parse {
                line: line_no,
                msg: format!("expected 3 comma-separated fields, got {}", fields.len()),
            });
        }
        if fields == ["src", "dst", "weight"] {
            continue;
        }
        let parse_index = |s: &str| {
            s.parse::<usize>().map_err(|_| GraphError::Parse {
                line: line_no,
                msg: format!("invalid node index {s:?}"),
            })
        };
        let src = parse_index(fields[0])?;
        let dst = parse_index(fields[1])?;
        let weight = fields[2].parse::<f64>().map_err(|_| GraphError::Parse {
            line: line_no,
            msg: format!("invalid weight {:?}", fields[2]),
        })?;
        max_index = max_index.max(src).max(dst);
        edges.push(Edge { src, dst, weight });
    }
    let n = if edges.is_empty() { 0 } else { max_index + 1 };
    ContactNetwork::new(n, edges)
}

/// Directed Hamiltonian cycle `0 -> 1 -> ... -> n-1 -> 0` plus `extra_edges`
/// distinct random edges, all weights uniform in `[lo, hi]`.
pub fn generate_cycle_plus_random(
    n: usize,
    extra_edges: usize,
    weight_range: (f64, f64),
    seed: u64,
) -> Result<ContactNetwork, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    let (lo, hi) = weight_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(GraphError::BadParameter(format!("weight range [{lo}, {hi}]")));
    }
    // n(n-1) ordered pairs minus the n cycle edges (for n = 2 the cycle uses both).
    let available = n * (n - 1) - n.min(n * (n - 1));
    if extra_edges > available {
        return Err(GraphError::TooManyExtraEdges { requested: extra_edges, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| if lo == hi { lo } else { rng.random_range(lo..=hi) };

    let mut edges: Vec<Edge> = (0..n)
        .map(|i| Edge { src: i, dst: (i + 1) % n, weight: 0.0 })
        .collect();
    for e in edges.iter_mut() {
        e.weight = draw(&mut rng);
    }
    if extra_edges > 0 {
        let mut candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|s| (0..n).map(move |d| (s, d)))
            .filter(|&(s, d)| s != d && d != (s + 1) % n)
            .collect();
        candidates.shuffle(&mut rng);
        for &(src, dst) in candidates.iter().take(extra_edges) {
            let weight = draw(&mut rng);
            edges.push(Edge { src, dst, weight });
        }
    }
    ContactNetwork::new(n, edges)
}

/// Complete bidirected core of `n_hubs` hubs, each leaf attached in both
/// directions to one uniformly chosen hub.
pub fn generate_hub_spoke(
    n_hubs: usize,
    n_leaves: usize,
    hub_weight: f64,
    leaf_weight: f64,
    seed: u64,
) -> Result<ContactNetwork, GraphError> {
    if n_hubs < 2 {
        return Err(GraphError::BadParameter(format!("need at least 2 hubs, got {n_hubs}")));
    }
    if !(hub_weight > 0.0 && hub_weight.is_finite()) {
        return Err(GraphError::BadParameter(format!("hub weight {hub_weight}")));
    }
    if n_leaves > 0 && !(leaf_weight > 0.0 && leaf_weight.is_finite()) {
        return Err(GraphError::BadParameter(format!("leaf weight {leaf_weight}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(n_hubs * (n_hubs - 1) + 2 * n_leaves);
    for s in 0..n_hubs {
        for d in 0..n_hubs {
            if s != d {
                edges.push(Edge { src: s, dst: d, weight: hub_weight });
            }
        }
    }
    for leaf in n_hubs..n_hubs + n_leaves {
        let hub = rng.random_range(0..n_hubs);
        edges.push(Edge { src: leaf, dst: hub, weight: leaf_weight });
        edges.push(Edge { src: hub, dst: leaf, weight: leaf_weight });
    }
    ContactNetwork::new(n_hubs + n_leaves, edges)
}
