//! Graph topologies and doubly stochastic consensus matrices.
//!
//! A [`ConsensusNetwork`] wraps a connected undirected graph together with its
//! Metropolis-Hastings mixing matrix `W` and the two spectral quantities the
//! convergence theory consumes: the minimum eigenvalue `lambda_min(W)` and the
//! second-largest singular value `rho(W)`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Residual tolerance for the doubly-stochastic checks.
pub const STOCHASTICITY_TOL: f64 = 1e-12;

const RANDOM_GRAPH_MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("topology needs at least one node")]
    EmptyGraph,
    #[error("a {family} topology needs at least two nodes, got {nodes}")]
    TooFewNodes { family: &'static str, nodes: usize },
    #[error("circulant degree must be in [1, N) = [1, {nodes}), got {degree}")]
    BadCirculantDegree { degree: usize, nodes: usize },
    #[error("random topology: {target} edges outside the connected range [{min}, {max}]")]
    BadEdgeTarget { target: usize, min: usize, max: usize },
    #[error("edge probability must be in (0, 1], got {0}")]
    BadEdgeProbability(f64),
    #[error("random topology still disconnected after {0} attempts")]
    DisconnectedAfterRetries(usize),
    #[error("invalid edge ({i}, {j}) for {nodes} nodes")]
    InvalidEdge { i: usize, j: usize, nodes: usize },
    #[error("duplicate edge ({i}, {j})")]
    DuplicateEdge { i: usize, j: usize },
    #[error("graph is disconnected")]
    Disconnected,
    #[error("edge list parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Families of graph topologies the simulator knows how to build.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopologyKind {
    /// Node 0 connected to every other node.
    Star,
    /// Cycle over all nodes.
    Circle,
    /// Each node connected to its `d` nearest neighbours on each side of the ring.
    Circulant(usize),
    /// All pairs connected.
    Complete,
    /// Erdos-Renyi graph with exactly the given number of edges,
    /// resampled under an incremented seed until connected.
    RandomEdges(usize),
    /// Erdos-Renyi graph with the given edge probability,
    /// resampled under an incremented seed until connected.
    RandomProb(f64),
}

/// A connected undirected graph without self-loops or duplicate edges.
///
/// Nodes are `0..node_count` internally; the edge-list text format is 1-indexed.
#[derive(Debug, Clone)]
pub struct Topology {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from an edge set, validating all invariants.
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, NetworkError> {
        if node_count == 0 {
            return Err(NetworkError::EmptyGraph);
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b || a >= node_count || b >= node_count {
                return Err(NetworkError::InvalidEdge { i: a, j: b, nodes: node_count });
            }
            let e = (a.min(b), a.max(b));
            if !set.insert(e) {
                return Err(NetworkError::DuplicateEdge { i: e.0, j: e.1 });
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); node_count];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        let topology = Topology { node_count, edges, adjacency };
        if !topology.is_connected() {
            return Err(NetworkError::Disconnected);
        }
        Ok(topology)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.node_count
    }

    /// Serializes to the edge-list text format: `N` on the first line, then one
    /// 1-indexed `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.node_count);
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{} {}", i + 1, j + 1);
        }
        out
    }

    /// Parses the edge-list text format produced by [`Topology::to_edge_list`].
    pub fn from_edge_list(text: &str) -> Result<Self, NetworkError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(idx, l)| (idx + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(NetworkError::Parse {
            line: 1,
            reason: "empty input, expected node count".into(),
        })?;
        let node_count: usize = header.parse().map_err(|_| NetworkError::Parse {
            line,
            reason: format!("expected node count, got {header:?}"),
        })?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let mut parts = l.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize, NetworkError> {
                let tok = tok.ok_or(NetworkError::Parse {
                    line,
                    reason: "expected `i j` pair".into(),
                })?;
                let v: usize = tok.parse().map_err(|_| NetworkError::Parse {
                    line,
                    reason: format!("expected node index, got {tok:?}"),
                })?;
                if v == 0 {
                    return Err(NetworkError::Parse {
                        line,
                        reason: "node indices are 1-based".into(),
                    });
                }
                Ok(v - 1)
            };
            let i = parse(parts.next())?;
            let j = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(NetworkError::Parse {
                    line,
                    reason: "trailing tokens after edge pair".into(),
                });
            }
            edges.push((i, j));
        }
        Topology::new(node_count, edges)
    }
}

/// Builds a topology from one of the supported families.
///
/// The seed only matters for the random families, which resample under an
/// incremented seed until the graph comes out connected.
pub fn build_topology(kind: TopologyKind, n: usize, seed: u64) -> Result<Topology, NetworkError> {
    if n < 2 {
        let family = match kind {
            TopologyKind::Star => "star",
            TopologyKind::Circle => "circle",
            TopologyKind::Circulant(_) => "circulant",
            TopologyKind::Complete => "complete",
            TopologyKind::RandomEdges(_) | TopologyKind::RandomProb(_) => "random",
        };
        return Err(NetworkError::TooFewNodes { family, nodes: n });
    }
    match kind {
        TopologyKind::Star => Topology::new(n, (1..n).map(|i| (0, i))),
        TopologyKind::Circle => {
            let edges: BTreeSet<(usize, usize)> = (0..n)
                .map(|i| {
                    let j = (i + 1) % n;
                    (i.min(j), i.max(j))
                })
                .collect();
            Topology::new(n, edges)
        }
        TopologyKind::Circulant(d) => {
            if d == 0 || d >= n {
                return Err(NetworkError::BadCirculantDegree { degree: d, nodes: n });
            }
            let mut edges = BTreeSet::new();
            for i in 0..n {
                for s in 1..=d {
                    let j = (i + s) % n;
                    if i != j {
                        edges.insert((i.min(j), i.max(j)));
                    }
                }
            }
            Topology::new(n, edges)
        }
        TopologyKind::Complete => {
            Topology::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
        }
        TopologyKind::RandomEdges(m) => {
            let max = n * (n - 1) / 2;
            if m < n - 1 || m > max {
                return Err(NetworkError::BadEdgeTarget { target: m, min: n - 1, max });
            }
            let all_pairs: Vec<(usize, usize)> =
                (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
            for attempt in 0..RANDOM_GRAPH_MAX_ATTEMPTS {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
                let mut pairs = all_pairs.clone();
                pairs.shuffle(&mut rng);
                pairs.truncate(m);
                if let Ok(t) = Topology::new(n, pairs) {
                    return Ok(t);
                }
            }
            Err(NetworkError::DisconnectedAfterRetries(RANDOM_GRAPH_MAX_ATTEMPTS))
        }
        TopologyKind::RandomProb(p) => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(NetworkError::BadEdgeProbability(p));
            }
            for attempt in 0..RANDOM_GRAPH_MAX_ATTEMPTS {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.gen::<f64>() < p {
                            edges.push((i, j));
                        }
                    }
                }
                if let Ok(t) = Topology::new(n, edges) {
                    return Ok(t);
                }
            }
            Err(NetworkError::DisconnectedAfterRetries(RANDOM_GRAPH_MAX_ATTEMPTS))
        }
    }
}

/// A topology plus its Metropolis-Hastings consensus matrix and cached spectral
/// quantities. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ConsensusNetwork {
    topology: Topology,
    weights: DMatrix<f64>,
    /// Row-wise nonzero entries `(j, w_ij)`, diagonal included.
    rows: Vec<Vec<(usize, f64)>>,
    lambda_min: f64,
    rho: f64,
}

impl ConsensusNetwork {
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn node_count(&self) -> usize {
        self.topology.node_count()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Minimum eigenvalue of `W`; strictly above -1 for a connected MH matrix.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Largest singular value of `W` strictly below one.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Applies `W (x) I_block` to a stacked state, writing into `out`.
    pub fn mix_into(&self, x: &DVector<f64>, block: usize, out: &mut DVector<f64>) {
        let n = self.node_count();
        assert_eq!(x.len(), n * block, "stacked state has wrong length");
        assert_eq!(out.len(), n * block, "output buffer has wrong length");
        out.fill(0.0);
        for i in 0..n {
            for &(j, w) in &self.rows[i] {
                let src = j * block;
                let dst = i * block;
                for c in 0..block {
                    out[dst + c] += w * x[src + c];
                }
            }
        }
    }

    /// Applies `W (x) I_block` to a stacked state.
    pub fn mix(&self, x: &DVector<f64>, block: usize) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.mix_into(x, block, &mut out);
        out
    }

    /// Applies `(I + W)/2 (x) I_block`, the averaged matrix the baselines use.
    pub fn mix_half_into(&self, x: &DVector<f64>, block: usize, out: &mut DVector<f64>) {
        self.mix_into(x, block, out);
        for (o, v) in out.iter_mut().zip(x.iter()) {
            *o = 0.5 * (*o + *v);
        }
    }

    pub fn mix_half(&self, x: &DVector<f64>, block: usize) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.mix_half_into(x, block, &mut out);
        out
    }
}

/// Builds the Metropolis-Hastings consensus matrix for a connected topology:
/// `w_ij = 1 / (1 + max(deg_i, deg_j))` on edges, diagonal filling each row to one.
pub fn metropolis_hastings(topology: &Topology) -> ConsensusNetwork {
    let n = topology.node_count();
    let mut w = DMatrix::<f64>::zeros(n, n);
    for &(i, j) in topology.edges() {
        let weight = 1.0 / (1.0 + topology.degree(i).max(topology.degree(j)) as f64);
        w[(i, j)] = weight;
        w[(j, i)] = weight;
    }
    for i in 0..n {
        let off: f64 = topology.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }

    let eigenvalues = w.clone().symmetric_eigen().eigenvalues;
    // The single eigenvalue at one witnesses connectivity.
    let near_one = eigenvalues.iter().filter(|&&l| (l - 1.0).abs() < 1e-9).count();
    assert_eq!(near_one, 1, "consensus matrix must have a simple eigenvalue at one");
    let perron = (0..n)
        .max_by(|&a, &b| eigenvalues[a].partial_cmp(&eigenvalues[b]).unwrap())
        .unwrap();
    let lambda_min = eigenvalues.min();
    let rho = (0..n)
        .filter(|&i| i != perron)
        .map(|i| eigenvalues[i].abs())
        .fold(0.0f64, f64::max);

    let rows = (0..n)
        .map(|i| {
            let mut row: Vec<(usize, f64)> = topology
                .neighbors(i)
                .iter()
                .map(|&j| (j, w[(i, j)]))
                .collect();
            row.push((i, w[(i, i)]));
            row.sort_by_key(|&(j, _)| j);
            row
        })
        .collect();

    ConsensusNetwork { topology: topology.clone(), weights: w, rows, lambda_min, rho }
}

/// Invariant-verification report for a consensus matrix. Reports residual
/// magnitudes instead of failing.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub is_doubly_stochastic: bool,
    pub row_sum_residual: f64,
    pub col_sum_residual: f64,
    pub symmetry_residual: f64,
    pub min_entry: f64,
    /// `max |WE - EW|` with `E = 11^T / N`.
    pub commutation_residual: f64,
    pub sparsity_matches_adjacency: bool,
    pub lambda_min: f64,
    pub rho: f64,
}

/// Verifies the doubly-stochastic and structural invariants of a network.
pub fn spectral_check(net: &ConsensusNetwork) -> SpectralReport {
    let n = net.node_count();
    let w = net.weights();
    let mut row_res = 0.0f64;
    let mut col_res = 0.0f64;
    let mut sym_res = 0.0f64;
    let mut min_entry = f64::INFINITY;
    for i in 0..n {
        let rs: f64 = (0..n).map(|j| w[(i, j)]).sum();
        let cs: f64 = (0..n).map(|j| w[(j, i)]).sum();
        row_res = row_res.max((rs - 1.0).abs());
        col_res = col_res.max((cs - 1.0).abs());
        for j in 0..n {
            sym_res = sym_res.max((w[(i, j)] - w[(j, i)]).abs());
            min_entry = min_entry.min(w[(i, j)]);
        }
    }

    let e = DMatrix::<f64>::from_element(n, n, 1.0 / n as f64);
    let commutation_residual = (w * &e - &e * w).abs().max();

    let mut pattern_ok = true;
    for i in 0..n {
        for j in 0..n {
            let structural = i == j || net.topology().neighbors(i).contains(&j);
            if (w[(i, j)] != 0.0) != structural {
                pattern_ok = false;
            }
        }
    }

    SpectralReport {
        is_doubly_stochastic: row_res <= STOCHASTICITY_TOL
            && col_res <= STOCHASTICITY_TOL
            && sym_res <= STOCHASTICITY_TOL
            && min_entry >= 0.0,
        row_sum_residual: row_res,
        col_sum_residual: col_res,
        symmetry_residual: sym_res,
        min_entry,
        commutation_residual,
        sparsity_matches_adjacency: pattern_ok,
        lambda_min: net.lambda_min(),
        rho: net.rho(),
    }
}
