//! Communication graphs and Metropolis consensus weights.
//!
//! A [`CommGraph`] is an undirected, connected graph without self loops. Its
//! [`WeightMatrix`] uses the lazy Metropolis rule
//! `W_ij = 1 / (1 + max(deg_i, deg_j))` on edges, with the diagonal absorbing
//! the remainder of each row. The weight matrix caches the spectral data the
//! convergence bounds consume: the second largest eigenvalue and the traces
//! `tr[W^{2τ}]` and `tr[(W^τ − 11ᵀ/N)²]`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for row/column sums and symmetry of supplied weight matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    node_count: usize,
    /// Normalized edges `(i, j)` with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    duplicates_removed: usize,
}

impl CommGraph {
    /// Validates and builds a graph. Duplicate edges (in either orientation)
    /// are dropped with a warning.
    pub fn new(node_count: usize, edge_list: &[(usize, usize)]) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::TooFewNodes(node_count));
        }
        let mut set = BTreeSet::new();
        let mut duplicates_removed = 0;
        for &(a, b) in edge_list {
            for idx in [a, b] {
                if idx >= node_count {
                    return Err(Error::IndexOutOfRange { index: idx, node_count });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
            if !set.insert((a.min(b), a.max(b))) {
                duplicates_removed += 1;
            }
        }
        if duplicates_removed > 0 {
            log::warn!("removed {duplicates_removed} duplicate edge(s)");
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); node_count];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }

        // breadth-first reachability from node 0
        let mut seen = vec![false; node_count];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &neighbors[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        if let Some(unreachable) = seen.iter().position(|s| !s) {
            return Err(Error::DisconnectedGraph { unreachable });
        }

        Ok(Self { node_count, edges, neighbors, duplicates_removed })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn duplicates_removed(&self) -> usize {
        self.duplicates_removed
    }

    pub fn is_tree(&self) -> bool {
        // connectivity holds by construction
        self.edges.len() + 1 == self.node_count
    }

    /// Edge-list text: one `i j` pair per line, preceded by a node-count comment.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes: {}\n", self.node_count);
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }
}

/// Parses an edge-list fixture. Lines starting with `#` are comments; a
/// comment of the form `# nodes: N` fixes the node count, otherwise it is
/// one more than the largest index seen.
pub fn parse_edge_list(text: &str) -> Result<CommGraph> {
    let mut declared = None;
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(n) = comment.trim().strip_prefix("nodes:") {
                let n = n.trim().parse::<usize>().map_err(|e| Error::ParseGraph {
                    line: lineno + 1,
                    msg: format!("bad node count: {e}"),
                })?;
                declared = Some(n);
            }
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut next = |what: &str| -> Result<usize> {
            parts
                .next()
                .ok_or_else(|| Error::ParseGraph { line: lineno + 1, msg: format!("missing {what}") })?
                .parse::<usize>()
                .map_err(|e| Error::ParseGraph { line: lineno + 1, msg: e.to_string() })
        };
        let a = next("first endpoint")?;
        let b = next("second endpoint")?;
        if parts.next().is_some() {
            return Err(Error::ParseGraph { line: lineno + 1, msg: "expected exactly two indices".into() });
        }
        edges.push((a, b));
    }
    let inferred = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
    CommGraph::new(declared.unwrap_or(inferred), &edges)
}

pub fn read_edge_list(path: impl AsRef<Path>) -> Result<CommGraph> {
    parse_edge_list(&std::fs::read_to_string(path)?)
}

/// Canonical labeling of the 8-node DC grid tree.
pub const GRID_TREE_EDGES: [(usize, usize); 7] =
    [(0, 1), (1, 2), (2, 3), (1, 4), (4, 5), (2, 6), (6, 7)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Path,
    Star,
    /// The canonical 8-node tree; the requested size must be 8.
    GridTree,
    Complete,
}

pub fn standard_graph(kind: GraphKind, n: usize) -> Result<CommGraph> {
    let edges: Vec<(usize, usize)> = match kind {
        GraphKind::Path => (1..n).map(|i| (i - 1, i)).collect(),
        GraphKind::Star => (1..n).map(|i| (0, i)).collect(),
        GraphKind::GridTree => {
            if n != 8 {
                return Err(Error::InvalidParameter(format!("grid tree has 8 nodes, requested {n}")));
            }
            GRID_TREE_EDGES.to_vec()
        }
        GraphKind::Complete => {
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
        }
    };
    CommGraph::new(n, &edges)
}

/// Random connected graph: a random spanning tree plus each remaining pair
/// with probability `extra_edge_prob`.
pub fn random_connected<R: Rng + ?Sized>(n: usize, extra_edge_prob: f64, rng: &mut R) -> Result<CommGraph> {
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.random_range(0..i), i));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(extra_edge_prob) {
                edges.push((i, j));
            }
        }
    }
    CommGraph::new(n, &edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsensusTraces {
    /// `tr[W^{2τ}]`
    pub tr_w2tau: f64,
    /// `tr[(W^τ − 11ᵀ/N)²]`
    pub tr_dev2: f64,
}

/// Symmetric doubly stochastic consensus matrix with cached spectral data.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    tau: usize,
    /// Eigenvalues sorted in decreasing order.
    eigenvalues: Vec<f64>,
    traces: ConsensusTraces,
    neighbors: Vec<Vec<usize>>,
}

impl WeightMatrix {
    /// Wraps an arbitrary symmetric doubly stochastic matrix with entries in
    /// `[0, 1]`. Used for test doubles such as exact averaging.
    pub fn from_matrix(entries: DMatrix<f64>, tau: usize) -> Result<Self> {
        let n = entries.nrows();
        if n == 0 || entries.ncols() != n {
            return Err(Error::InvalidWeights(format!("not square: {}x{}", n, entries.ncols())));
        }
        if tau == 0 {
            return Err(Error::InvalidParameter("tau must be >= 1".into()));
        }
        for i in 0..n {
            let row: f64 = entries.row(i).sum();
            let col: f64 = entries.column(i).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidWeights(format!("row/column {i} sums to {row}/{col}")));
            }
            for j in 0..n {
                let w = entries[(i, j)];
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::InvalidWeights(format!("entry ({i},{j}) = {w} outside [0,1]")));
                }
                if (w - entries[(j, i)]).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidWeights(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        let eig = SymmetricEigen::new(entries.clone());
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && entries[(i, j)] > 0.0).collect())
            .collect();
        let mut w = Self {
            entries,
            tau,
            eigenvalues,
            traces: ConsensusTraces { tr_w2tau: 0.0, tr_dev2: 0.0 },
            neighbors,
        };
        w.traces = w.consensus_deviation(tau);
        Ok(w)
    }

    /// Exact averaging `11ᵀ/N`.
    pub fn complete_averaging(n: usize, tau: usize) -> Result<Self> {
        Self::from_matrix(DMatrix::from_element(n, n, 1.0 / n as f64), tau)
    }

    /// Same matrix with the caches recomputed for another consensus depth.
    pub fn with_tau(&self, tau: usize) -> Result<Self> {
        if tau == 0 {
            return Err(Error::InvalidParameter("tau must be >= 1".into()));
        }
        let mut w = self.clone();
        w.tau = tau;
        w.traces = w.consensus_deviation(tau);
        Ok(w)
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Nodes `j != i` with `W_ij > 0`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Second largest eigenvalue by value (0 for a single node).
    pub fn lambda2(&self) -> f64 {
        self.eigenvalues.get(1).copied().unwrap_or(0.0)
    }

    pub fn traces(&self) -> ConsensusTraces {
        self.traces
    }

    /// `tr[W^{2τ}]` and `tr[(W^τ − 11ᵀ/N)²]` from the eigen-decomposition.
    ///
    /// Since `W1 = 1`, the deviation matrix shares every eigenvalue of `W^τ`
    /// except the unit one, which it maps to zero.
    pub fn consensus_deviation(&self, tau: usize) -> ConsensusTraces {
        let pow = |l: f64| l.powi(2 * tau as i32);
        let tr_w2tau: f64 = self.eigenvalues.iter().map(|&l| pow(l)).sum();
        let tr_dev2: f64 = self.eigenvalues.iter().skip(1).map(|&l| pow(l)).sum();
        ConsensusTraces { tr_w2tau, tr_dev2 }
    }

    /// `W^p` by repeated squaring.
    pub fn power(&self, p: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut result = DMatrix::identity(n, n);
        let mut base = self.entries.clone();
        let mut e = p;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        result
    }

    /// Same traces as [`consensus_deviation`](Self::consensus_deviation),
    /// computed from explicit matrix powers.
    pub fn consensus_deviation_by_powers(&self, tau: usize) -> ConsensusTraces {
        let n = self.n();
        let wt = self.power(tau);
        let tr_w2tau = wt.iter().map(|x| x * x).sum();
        let avg = DMatrix::from_element(n, n, 1.0 / n as f64);
        let tr_dev2 = (wt - avg).iter().map(|x| x * x).sum();
        ConsensusTraces { tr_w2tau, tr_dev2 }
    }
}

/// Lazy Metropolis weights `1/(1 + max(deg_i, deg_j))` for the given graph.
pub fn metropolis_weights(graph: &CommGraph, tau: usize) -> Result<WeightMatrix> {
    let n = graph.node_count();
    let mut w = DMatrix::zeros(n, n);
    for &(a, b) in graph.edges() {
        let v = 1.0 / (1.0 + graph.degree(a).max(graph.degree(b)) as f64);
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    for i in 0..n {
        let off: f64 = graph.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::from_matrix(w, tau)
}
