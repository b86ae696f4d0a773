#![allow(dead_code)]

use gfgn::{rng, Graph, Matrix};
use rand::Rng;

/// Erdős–Rényi graph with edge probability `p`.
pub fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
    let mut r = rng::seeded(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

/// Entries uniform in [-1, 1).
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::seeded(seed ^ 0x5eed);
    let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Nested-vector linear algebra used as an independent reference.
pub mod dense {
    use gfgn::Matrix;

    pub type Rows = Vec<Vec<f64>>;

    pub fn rows(m: &Matrix) -> Rows {
        (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
    }

    pub fn matrix(r: &Rows) -> Matrix {
        let cols = r.first().map_or(0, Vec::len);
        Matrix::from_vec(r.len(), cols, r.concat()).unwrap()
    }

    pub fn mul(a: &Rows, b: &Rows) -> Rows {
        let n = b[0].len();
        a.iter()
            .map(|row| {
                (0..n)
                    .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                    .collect()
            })
            .collect()
    }

    pub fn mul_vec(a: &Rows, v: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// Column-wise concatenation of blocks with equal row counts.
    pub fn hcat(blocks: &[Rows]) -> Matrix {
        let n = blocks[0].len();
        let joined: Rows = (0..n)
            .map(|i| blocks.iter().flat_map(|b| b[i].iter().copied()).collect())
            .collect();
        matrix(&joined)
    }

    /// `D^{-1/2} A D^{-1/2}` and the Laplacian `I − D^{-1/2} A D^{-1/2}` built
    /// from an adjacency list, optionally with self-loops added.
    pub fn normalized(neighbors: &[Vec<usize>], self_loops: bool) -> (Rows, Rows) {
        let n = neighbors.len();
        let mut a = vec![vec![0.0; n]; n];
        for (i, nb) in neighbors.iter().enumerate() {
            for &j in nb {
                a[i][j] = 1.0;
            }
            if self_loops {
                a[i][i] = 1.0;
            }
        }
        let d: Vec<f64> = a.iter().map(|r| r.iter().sum::<f64>()).collect();
        let mut adj = vec![vec![0.0; n]; n];
        let mut lap = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if a[i][j] != 0.0 {
                    adj[i][j] = a[i][j] / (d[i] * d[j]).sqrt();
                }
                lap[i][j] = if i == j && d[i] > 0.0 { 1.0 } else { 0.0 } - adj[i][j];
            }
        }
        (adj, lap)
    }
}
