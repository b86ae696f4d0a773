//! Undirected graphs in CSR form and the normalized operators built on them.
//!
//! A [`Graph`] stores the raw adjacency `A` without self-loops. Operators
//! that aggregate over a neighborhood use the augmented `Ã = A + I` and the
//! augmented degrees `d̃ᵢ = 1 + Σⱼ Aᵢⱼ`, which are always at least one.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    deg_aug: Vec<f64>,
}

impl Graph {
    /// Symmetrizes and deduplicates `edges`; self-edges are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (line, &(u, v)) in edges.iter().enumerate() {
            if u >= n || v >= n {
                return Err(Error::Format {
                    path: "<edge list>".into(),
                    line: line + 1,
                    msg: format!("edge ({u}, {v}) references a node >= {n}"),
                });
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        Ok(Self::from_adjacency(adj))
    }

    fn from_adjacency(mut adj: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(adj.len() + 1);
        offsets.push(0);
        let mut targets = Vec::new();
        let mut deg_aug = Vec::with_capacity(adj.len());
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            targets.extend_from_slice(list);
            offsets.push(targets.len());
            deg_aug.push(1.0 + list.len() as f64);
        }
        Self {
            offsets,
            targets,
            deg_aug,
        }
    }

    /// Reads a tab-separated `src\tdst` edge file (0-indexed, `#` comments).
    pub fn read_edge_file(path: &Path, n: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Format {
                path: path.to_path_buf(),
                line: idx + 1,
                msg,
            };
            let mut it = line.split_whitespace();
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(err(format!("expected two node indices, got {line:?}")));
            };
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| err(format!("invalid node index {s:?}")))
            };
            let (u, v) = (parse(a)?, parse(b)?);
            if u >= n || v >= n {
                return Err(err(format!("edge ({u}, {v}) references a node >= {n}")));
            }
            edges.push((u, v));
        }
        Self::from_edges(n, &edges)
    }

    pub fn write_edge_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (u, v) in self.edges() {
            out.push_str(&format!("{u}\t{v}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn n(&self) -> usize {
        self.deg_aug.len()
    }

    /// Number of undirected edges (each stored twice in CSR).
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn deg_aug(&self) -> &[f64] {
        &self.deg_aug
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    /// Subgraph induced by `nodes`, relabelled `0..nodes.len()` in the given order.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.n()];
        for (k, &v) in nodes.iter().enumerate() {
            pos[v] = k;
        }
        let adj = nodes
            .iter()
            .map(|&v| {
                self.neighbors(v)
                    .iter()
                    .filter_map(|&t| (pos[t] != usize::MAX).then_some(pos[t]))
                    .collect()
            })
            .collect();
        Self::from_adjacency(adj)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let mut adj = vec![Vec::new(); self.n()];
        for u in 0..self.n() {
            adj[perm[u]] = self.neighbors(u).iter().map(|&v| perm[v]).collect();
        }
        Self::from_adjacency(adj)
    }
}

/// CSR matrix with per-entry weights.
#[derive(Debug)]
pub struct SparseOperator {
    n: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    symmetric: bool,
    transpose: OnceLock<Box<SparseOperator>>,
}

impl SparseOperator {
    /// `symmetric` promises `weight(i, j) == weight(j, i)`; backward products
    /// then reuse the operator instead of building its transpose.
    pub fn from_csr(
        n: usize,
        offsets: Vec<usize>,
        targets: Vec<usize>,
        weights: Vec<f64>,
        symmetric: bool,
    ) -> Self {
        assert_eq!(offsets.len(), n + 1);
        assert_eq!(targets.len(), weights.len());
        assert_eq!(*offsets.last().unwrap(), targets.len());
        Self {
            n,
            offsets,
            targets,
            weights,
            symmetric,
            transpose: OnceLock::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_csr(n, (0..=n).collect(), (0..n).collect(), vec![1.0; n], true)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn transposed(&self) -> &SparseOperator {
        if self.symmetric {
            return self;
        }
        self.transpose.get_or_init(|| {
            let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
            for i in 0..self.n {
                for e in self.offsets[i]..self.offsets[i + 1] {
                    rows[self.targets[e]].push((i, self.weights[e]));
                }
            }
            let mut offsets = vec![0];
            let (mut targets, mut weights) = (Vec::new(), Vec::new());
            for row in rows {
                for (t, w) in row {
                    targets.push(t);
                    weights.push(w);
                }
                offsets.push(targets.len());
            }
            Box::new(SparseOperator::from_csr(
                self.n, offsets, targets, weights, false,
            ))
        })
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for e in self.offsets[i]..self.offsets[i + 1] {
                let cur = m.get(i, self.targets[e]);
                m.set(i, self.targets[e], cur + self.weights[e]);
            }
        }
        m
    }

    /// `self · v` for a single vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| {
                (self.offsets[i]..self.offsets[i + 1])
                    .map(|e| self.weights[e] * v[self.targets[e]])
                    .sum()
            })
            .collect()
    }

    /// Largest absolute row sum; bounds the spectral radius.
    pub fn gershgorin_bound(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.weights[self.offsets[i]..self.offsets[i + 1]]
                    .iter()
                    .map(|w| w.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// CSR skeleton of `Ã = A + I`: each row holds its neighbors plus itself,
/// sorted ascending.
pub fn augmented_csr(g: &Graph) -> (Vec<usize>, Vec<usize>) {
    let mut offsets = Vec::with_capacity(g.n() + 1);
    offsets.push(0);
    let mut targets = Vec::with_capacity(g.targets().len() + g.n());
    for i in 0..g.n() {
        let nb = g.neighbors(i);
        let split = nb.partition_point(|&j| j < i);
        targets.extend_from_slice(&nb[..split]);
        targets.push(i);
        targets.extend_from_slice(&nb[split..]);
        offsets.push(targets.len());
    }
    (offsets, targets)
}

/// `D̃^{-1/2} Ã D̃^{-1/2}`.
pub fn normalized_adjacency(g: &Graph) -> SparseOperator {
    let (offsets, targets) = augmented_csr(g);
    let d = g.deg_aug();
    let mut weights = Vec::with_capacity(targets.len());
    for i in 0..g.n() {
        for &j in &targets[offsets[i]..offsets[i + 1]] {
            weights.push(1.0 / (d[i] * d[j]).sqrt());
        }
    }
    SparseOperator::from_csr(g.n(), offsets, targets, weights, true)
}

/// Row-normalized `D̃^{-1} Ã`: the mean over `N(i) ∪ {i}`.
pub fn mean_aggregator(g: &Graph) -> SparseOperator {
    let (offsets, targets) = augmented_csr(g);
    let d = g.deg_aug();
    let mut weights = Vec::with_capacity(targets.len());
    for i in 0..g.n() {
        for _ in offsets[i]..offsets[i + 1] {
            weights.push(1.0 / d[i]);
        }
    }
    SparseOperator::from_csr(g.n(), offsets, targets, weights, false)
}

/// `I − D^{-1/2} A D^{-1/2}`, over `Ã`/`D̃` when `self_loops` is set.
///
/// Without self-loops an isolated node has no normalization; it is given the
/// degree sentinel 1 and treated as its own neighbor, so its row of `L` is
/// zero (`L_ii = 0`).
pub fn normalized_laplacian(g: &Graph, self_loops: bool) -> SparseOperator {
    let (offsets, targets) = augmented_csr(g);
    let mut weights = Vec::with_capacity(targets.len());
    let d: Vec<f64> = if self_loops {
        g.deg_aug().to_vec()
    } else {
        (0..g.n()).map(|i| g.degree(i).max(1) as f64).collect()
    };
    for i in 0..g.n() {
        for &j in &targets[offsets[i]..offsets[i + 1]] {
            let w = if i == j {
                if self_loops {
                    1.0 - 1.0 / d[i]
                } else if g.degree(i) == 0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                -1.0 / (d[i] * d[j]).sqrt()
            };
            weights.push(w);
        }
    }
    SparseOperator::from_csr(g.n(), offsets, targets, weights, true)
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Adds `round(ratio · |E|)` new undirected edges drawn uniformly from the
/// absent non-self pairs by rejection sampling on a seeded xoshiro256++
/// stream. Original edges are kept.
pub fn add_random_edges(g: &Graph, ratio: f64, seed: u64) -> Result<Graph> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("noise ratio {ratio} must be >= 0")));
    }
    let n = g.n();
    let count = round_half_up(ratio * g.num_edges() as f64);
    if count == 0 {
        return Ok(g.clone());
    }
    let pairs = n * n.saturating_sub(1) / 2;
    let absent = pairs - g.num_edges();
    if count > absent {
        return Err(Error::Config(format!(
            "cannot add {count} edges: only {absent} absent pairs"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut added: HashSet<(usize, usize)> = HashSet::with_capacity(count);
    let mut new_edges = Vec::with_capacity(count);
    while new_edges.len() < count {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if g.has_edge(key.0, key.1) || !added.insert(key) {
            continue;
        }
        new_edges.push(key);
    }
    let mut adj: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i).to_vec()).collect();
    for (u, v) in new_edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    Ok(Graph::from_adjacency(adj))
}

/// Fraction of undirected edges whose endpoints share a label; `NaN` for an
/// edgeless graph.
pub fn edge_homophily(g: &Graph, labels: &[usize]) -> f64 {
    assert_eq!(labels.len(), g.n());
    let (mut same, mut total) = (0usize, 0usize);
    for (u, v) in g.edges() {
        total += 1;
        if labels[u] == labels[v] {
            same += 1;
        }
    }
    same as f64 / total as f64
}
