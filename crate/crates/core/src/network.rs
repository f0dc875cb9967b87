//! Communication graphs, doubly stochastic weights and the spectral gap.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Above this size σ₂ is computed by deflated power iteration instead of a
/// full symmetric eigendecomposition.
pub const EXACT_EIGEN_MAX_N: usize = 512;
pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITERS: usize = 100_000;

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const STOCHASTIC_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Topology {
    Grid { rows: usize, cols: usize },
    Complete(usize),
    Ring(usize),
    Path(usize),
    EdgeList { n: usize, edges: Vec<(usize, usize)> },
}

/// Undirected simple graph on nodes 0..n.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from undirected pairs; duplicates collapse, self-loops
    /// and out-of-range indices are rejected.
    pub fn from_edges(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Graph("graph has no nodes".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::Graph(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(Error::Graph(format!("self-loop at node {i}")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        Ok(Self { n, edges, adjacency })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].contains(&j)
    }

    /// Number of connected components, by breadth-first traversal.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &w in &self.adjacency[u] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.components() == 1
    }
}

pub fn build_graph(topology: &Topology) -> Result<Graph> {
    match topology {
        Topology::Grid { rows, cols } => {
            let (r, c) = (*rows, *cols);
            if r == 0 || c == 0 {
                return Err(Error::Graph(format!("empty grid {r}x{c}")));
            }
            let id = |a: usize, b: usize| a * c + b;
            let mut edges = Vec::new();
            for a in 0..r {
                for b in 0..c {
                    if b + 1 < c {
                        edges.push((id(a, b), id(a, b + 1)));
                    }
                    if a + 1 < r {
                        edges.push((id(a, b), id(a + 1, b)));
                    }
                }
            }
            Graph::from_edges(r * c, edges)
        }
        Topology::Complete(n) => {
            let n = *n;
            Graph::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
        }
        Topology::Ring(n) => {
            let n = *n;
            let edges: Vec<_> = if n < 3 {
                (1..n).map(|i| (i - 1, i)).collect()
            } else {
                (0..n).map(|i| (i, (i + 1) % n)).collect()
            };
            Graph::from_edges(n, edges)
        }
        Topology::Path(n) => {
            let n = *n;
            Graph::from_edges(n, (1..n).map(|i| (i - 1, i)))
        }
        Topology::EdgeList { n, edges } => Graph::from_edges(*n, edges.iter().copied()),
    }
}

/// Parses the "i j" per-line edge list format (0-indexed, blank lines ignored).
/// The node count is one more than the largest index unless `n` is given.
pub fn parse_edge_list(text: &str, n: Option<usize>) -> Result<Graph> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            what: "edge list",
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(parse_err(format!("expected two indices, found {:?}", trimmed)));
        }
        let i: usize = fields[0].parse().map_err(|_| parse_err(format!("bad index {:?}", fields[0])))?;
        let j: usize = fields[1].parse().map_err(|_| parse_err(format!("bad index {:?}", fields[1])))?;
        edges.push((i, j));
    }
    let inferred = edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
    let n = n.unwrap_or(inferred);
    Graph::from_edges(n, edges)
}

pub fn read_edge_list(path: &Path, n: Option<usize>) -> Result<Graph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, n)
}

/// Consensus weight matrix together with its cached σ₂.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
    sigma2: f64,
}

impl WeightMatrix {
    /// Wraps an arbitrary square matrix. No invariants are enforced here;
    /// run [`validate`] before relying on it.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() || w.nrows() == 0 {
            return Err(Error::Weights(format!("matrix must be square and nonempty, got {}x{}", w.nrows(), w.ncols())));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Weights("non-finite entry".into()));
        }
        let sigma2 = sigma2(&w);
        Ok(Self { w, sigma2 })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// Metropolis–Hastings weights: W_ij = 1 / (1 + max(deg i, deg j)) on edges,
/// diagonal takes the remainder.
pub fn metropolis_weights(g: &Graph) -> Result<WeightMatrix> {
    let components = g.components();
    if components != 1 {
        return Err(Error::Disconnected { components });
    }
    let n = g.n();
    let mut w = DMatrix::zeros(n, n);
    for &(i, j) in g.edges() {
        let wij = 1.0 / (1.0 + g.degree(i).max(g.degree(j)) as f64);
        w[(i, j)] = wij;
        w[(j, i)] = wij;
    }
    for i in 0..n {
        let off: f64 = g.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::from_matrix(w)
}

/// W = 11ᵀ / n, the complete-graph averaging matrix; σ₂ is exactly zero.
pub fn uniform_complete_weights(n: usize) -> Result<WeightMatrix> {
    if n == 0 {
        return Err(Error::Weights("need at least one agent".into()));
    }
    Ok(WeightMatrix {
        w: DMatrix::from_element(n, n, 1.0 / n as f64),
        sigma2: 0.0,
    })
}

/// Second-largest eigenvalue magnitude, switching method on size.
pub fn sigma2(w: &DMatrix<f64>) -> f64 {
    if w.nrows() <= EXACT_EIGEN_MAX_N {
        sigma2_exact(w)
    } else {
        sigma2_power(w, POWER_TOL, POWER_MAX_ITERS).value
    }
}

/// σ₂ from a full symmetric eigendecomposition.
pub fn sigma2_exact(w: &DMatrix<f64>) -> f64 {
    if w.nrows() < 2 {
        return 0.0;
    }
    let sym = (w + w.transpose()) * 0.5;
    let mut mags: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().map(|l| l.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    mags[1]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIteration {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// σ₂ by power iteration restricted to the complement of the consensus
/// direction 1 (the top eigenvector of any symmetric doubly stochastic W).
///
/// The estimate is ‖Wv‖ for unit v ⟂ 1, which converges to the largest
/// remaining |λ| even when ±λ tie.
pub fn sigma2_power(w: &DMatrix<f64>, tol: f64, max_iters: usize) -> PowerIteration {
    let n = w.nrows();
    if n < 2 {
        return PowerIteration {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let deflate = |v: &mut nalgebra::DVector<f64>| {
        let mean = v.mean();
        v.add_scalar_mut(-mean);
    };
    // Fixed, non-symmetric start so no eigen-direction is missed by construction.
    let mut v = nalgebra::DVector::from_fn(n, |i, _| ((i as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.5);
    deflate(&mut v);
    let norm = v.norm();
    if norm == 0.0 {
        return PowerIteration {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    v /= norm;
    let mut estimate = 0.0;
    for iter in 1..=max_iters {
        let mut next = w * &v;
        deflate(&mut next);
        let value = next.norm();
        if value == 0.0 {
            return PowerIteration {
                value: 0.0,
                iterations: iter,
                converged: true,
            };
        }
        next /= value;
        v = next;
        if (value - estimate).abs() <= tol {
            return PowerIteration {
                value,
                iterations: iter,
                converged: true,
            };
        }
        estimate = value;
    }
    PowerIteration {
        value: estimate,
        iterations: max_iters,
        converged: false,
    }
}

/// A graph together with the consensus weights used on it.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    graph: Graph,
    weights: WeightMatrix,
}

impl Network {
    pub fn new(graph: Graph, weights: WeightMatrix) -> Result<Self> {
        if graph.n() != weights.n() {
            return Err(Error::Dimension {
                what: "weight matrix size",
                expected: graph.n(),
                got: weights.n(),
            });
        }
        Ok(Self { graph, weights })
    }

    /// Metropolis weights on the given topology.
    pub fn metropolis(topology: &Topology) -> Result<Self> {
        let graph = build_graph(topology)?;
        let weights = metropolis_weights(&graph)?;
        Self::new(graph, weights)
    }

    /// Complete graph with uniform averaging (the centralized comparator).
    pub fn complete_uniform(n: usize) -> Result<Self> {
        Self::new(build_graph(&Topology::Complete(n))?, uniform_complete_weights(n)?)
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn sigma2(&self) -> f64 {
        self.weights.sigma2()
    }

    pub fn validate(&self) -> ValidationReport {
        validate(&self.weights, &self.graph)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Measured defect (or measured value, for σ₂ and component counts).
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<20} {:<4} {:.3e}", c.name, if c.passed { "ok" } else { "FAIL" }, c.residual)?;
        }
        Ok(())
    }
}

/// Checks every connectivity and weight invariant, reporting residuals.
pub fn validate(w: &WeightMatrix, g: &Graph) -> ValidationReport {
    let m = w.matrix();
    let n = m.nrows();
    let mut checks = Vec::new();
    let mut push = |name, passed, residual| checks.push(Check { name, passed, residual });

    let size_ok = n == g.n();
    push("size", size_ok, (n as f64 - g.n() as f64).abs());

    let min_entry = m.min();
    push("nonnegative", min_entry >= 0.0, (-min_entry).max(0.0));

    let asym = (m - m.transpose()).amax();
    push("symmetric", asym <= SYMMETRY_TOL, asym);

    let row_defect = m.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    push("row_sums", row_defect <= STOCHASTIC_TOL, row_defect);
    let col_defect = m.column_iter().map(|c| (c.sum() - 1.0).abs()).fold(0.0, f64::max);
    push("column_sums", col_defect <= STOCHASTIC_TOL, col_defect);

    let min_diag = m.diagonal().min();
    push("positive_diagonal", min_diag > 0.0, min_diag);

    let mut off_pattern = 0.0f64;
    if size_ok {
        for i in 0..n {
            for j in 0..n {
                if i != j && m[(i, j)] > 0.0 && !g.has_edge(i, j) {
                    off_pattern = off_pattern.max(m[(i, j)]);
                }
            }
        }
    }
    push("sparsity", size_ok && off_pattern == 0.0, off_pattern);

    let components = g.components();
    push("connected", components == 1, components as f64);

    let s2 = w.sigma2();
    push("sigma2_below_one", s2 < 1.0, s2);

    ValidationReport { checks }
}
