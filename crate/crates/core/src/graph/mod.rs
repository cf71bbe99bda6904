//! Undirected graphs, driver-node selection and graph-derived quantities.

mod io;
mod matching;

pub use io::{read_edge_list, write_edge_list};
pub use matching::{bipartite_source_drivers, hopcroft_karp, max_matching_drivers, two_coloring, Matching};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("duplicate driver node {0}")]
    DuplicateDriver(usize),
    #[error("coupling constant must be non-zero")]
    ZeroCoupling,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("margin must be non-negative, got {0}")]
    NegativeMargin(f64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

/// Simple undirected graph with 0/1 adjacency and no self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    /// Sorted, each pair stored once with `i < j`.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    grid: Option<(usize, usize)>,
}

impl Graph {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            for node in [a, b] {
                if node >= n {
                    return Err(GraphError::NodeOutOfRange { node, n });
                }
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            edges,
            neighbors,
            grid: None,
        })
    }

    /// G(n, p): every unordered pair is drawn independently with probability
    /// `p` from a ChaCha8 stream seeded with `seed`, pairs visited in
    /// lexicographic order.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(GraphError::InvalidProbability(p));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Self::from_edges(n, edges)
    }

    /// 4-neighbour grid without wraparound. Node `r * cols + c` sits at row
    /// `r` (row 0 on top) and column `c`.
    pub fn lattice2d(rows: usize, cols: usize) -> Result<Self, GraphError> {
        if rows == 0 || cols == 0 {
            return Err(GraphError::Empty);
        }
        let id = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                }
            }
        }
        let mut g = Self::from_edges(rows * cols, edges)?;
        g.grid = Some((rows, cols));
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.n as f64
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// `(rows, cols)` for graphs built by [`Graph::lattice2d`].
    /// True when every node is reachable from node 0.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for &j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    /// Dense row-major 0/1 adjacency.
    pub fn adjacency(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n * self.n];
        for &(i, j) in &self.edges {
            a[i * self.n + j] = 1.0;
            a[j * self.n + i] = 1.0;
        }
        a
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
        }
        l
    }

    /// Directed arc lists `(owner, neighbour)` covering both directions of
    /// every edge, grouped by owner in ascending order.
    pub fn arc_index(&self) -> ArcIndex {
        let mut owner = Vec::with_capacity(2 * self.edges.len());
        let mut other = Vec::with_capacity(2 * self.edges.len());
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                owner.push(i);
                other.push(j);
            }
        }
        ArcIndex {
            gather_owner: owner.iter().map(|&i| Some(i)).collect(),
            gather_other: other.iter().map(|&j| Some(j)).collect(),
            owner: owner.into(),
        }
    }
}

/// Index arrays for edge-wise gathers and node-wise scatters on a tape.
#[derive(Debug, Clone)]
pub struct ArcIndex {
    pub gather_owner: Arc<[Option<usize>]>,
    pub gather_other: Arc<[Option<usize>]>,
    pub owner: Arc<[usize]>,
}

impl ArcIndex {
    pub fn len(&self) -> usize {
        self.owner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owner.is_empty()
    }
}

/// Ordered driver nodes; the `m`-th control input acts on `drivers[m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverMap {
    n: usize,
    drivers: Vec<usize>,
    gains: Option<Vec<f64>>,
}

impl DriverMap {
    pub fn new(n: usize, drivers: Vec<usize>) -> Result<Self, GraphError> {
        let mut seen = vec![false; n];
        for &d in &drivers {
            if d >= n {
                return Err(GraphError::NodeOutOfRange { node: d, n });
            }
            if std::mem::replace(&mut seen[d], true) {
                return Err(GraphError::DuplicateDriver(d));
            }
        }
        let map = Self {
            n,
            drivers,
            gains: None,
        };
        debug_assert!(map.driver_matrix_is_valid());
        Ok(map)
    }

    pub fn with_gains(mut self, gains: Vec<f64>) -> Result<Self, GraphError> {
        if gains.len() != self.drivers.len() {
            return Err(GraphError::LengthMismatch {
                expected: self.drivers.len(),
                got: gains.len(),
            });
        }
        self.gains = Some(gains);
        Ok(self)
    }

    pub fn all(n: usize) -> Self {
        Self {
            n,
            drivers: (0..n).collect(),
            gains: None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.drivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drivers.is_empty()
    }

    pub fn drivers(&self) -> &[usize] {
        &self.drivers
    }

    pub fn gains(&self) -> Option<&[f64]> {
        self.gains.as_deref()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.drivers.contains(&node)
    }

    pub fn scatter_index(&self) -> Arc<[usize]> {
        self.drivers.clone().into()
    }

    pub fn gather_index(&self) -> Arc<[Option<usize>]> {
        self.drivers.iter().map(|&d| Some(d)).collect()
    }

    /// Binary driver matrix `B` (N x M, row-major).
    pub fn driver_matrix(&self) -> Vec<f64> {
        let m = self.drivers.len();
        let mut b = vec![0.0; self.n * m];
        for (col, &node) in self.drivers.iter().enumerate() {
            b[node * m + col] = 1.0;
        }
        b
    }

    /// `B u` as a length-N vector.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (&node, &v) in self.drivers.iter().zip(u) {
            out[node] += v;
        }
        out
    }

    fn driver_matrix_is_valid(&self) -> bool {
        let m = self.drivers.len();
        let b = self.driver_matrix();
        let cols_ok = (0..m).all(|c| (0..self.n).filter(|&r| b[r * m + c] != 0.0).count() == 1);
        let rows_ok = (0..self.n).all(|r| b[r * m..(r + 1) * m].iter().filter(|&&v| v != 0.0).count() <= 1);
        cols_ok && rows_ok && m <= self.n
    }
}

/// Moore–Penrose pseudo-inverse of the graph Laplacian through a symmetric
/// eigendecomposition. Eigenvalues at or below `1e-9 * lambda_max` are
/// treated as zero modes.
pub fn laplacian_pinv(g: &Graph) -> DMatrix<f64> {
    let n = g.n();
    let eig = SymmetricEigen::new(g.laplacian());
    let lmax = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let tol = 1e-9 * lmax;
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= tol || lambda <= 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        out += (v * v.transpose()) / lambda;
    }
    out
}

/// Synchronized steady state `K^{-1} L^+ omega`.
pub fn steady_state(g: &Graph, coupling: f64, omega: &[f64]) -> Result<Vec<f64>, GraphError> {
    if coupling == 0.0 {
        return Err(GraphError::ZeroCoupling);
    }
    if omega.len() != g.n() {
        return Err(GraphError::LengthMismatch {
            expected: g.n(),
            got: omega.len(),
        });
    }
    let pinv = laplacian_pinv(g);
    let w = nalgebra::DVector::from_column_slice(omega);
    Ok((pinv * w / coupling).iter().copied().collect())
}

/// Feedback-control gains for the Kuramoto baseline, taken at equality of
/// the driver-selection bound. The sum runs over neighbours only; nodes with
/// `|b_i| > 1e-12` become drivers and keep their gain.
pub fn kuramoto_gains(
    g: &Graph,
    coupling: f64,
    steady: &[f64],
    margin: f64,
) -> Result<DriverMap, GraphError> {
    if margin < 0.0 {
        return Err(GraphError::NegativeMargin(margin));
    }
    if steady.len() != g.n() {
        return Err(GraphError::LengthMismatch {
            expected: g.n(),
            got: steady.len(),
        });
    }
    let mut drivers = Vec::new();
    let mut gains = Vec::new();
    for i in 0..g.n() {
        let b: f64 = g
            .neighbors(i)
            .iter()
            .map(|&j| {
                let fwd = coupling * (steady[i] - steady[j]).cos() - margin;
                let bwd = coupling * (steady[j] - steady[i]).cos() - margin;
                fwd.abs() - bwd
            })
            .sum();
        if b.abs() > 1e-12 {
            drivers.push(i);
            gains.push(b);
        }
    }
    DriverMap::new(g.n(), drivers)?.with_gains(gains)
}
