//! Eigendecomposition of small normalized Laplacians and the polynomial
//! filter `(I − sL)^K`, whose spectral response is `h(λ) = (1 − sλ)^K`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::graph::{Graph, SparseOperator};
use crate::tensor::Matrix;

pub const MAX_DENSE_NODES: usize = 512;
const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;
const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// `L = U diag(λ) Uᵀ` with eigenvalues ascending and eigenvectors as the
/// columns of `U`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// `U diag(f(λ)) Uᵀ h`.
    pub fn apply_spectral(&self, h: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let u = &self.eigenvectors;
        let n = u.rows();
        assert_eq!(h.len(), n);
        let mut out = vec![0.0; n];
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let coef: f64 = (0..n).map(|i| u.get(i, k) * h[i]).sum::<f64>() * f(lam);
            for (i, o) in out.iter_mut().enumerate() {
                *o += u.get(i, k) * coef;
            }
        }
        out
    }
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops
/// below 1e-12.
pub fn eig_symmetric(m: &Matrix) -> Result<EigenDecomposition> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::Shape {
            op: "eig_symmetric",
            left: m.shape(),
            right: (n, n),
        });
    }
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym));
    }

    let mut a = m.as_slice().to_vec();
    let mut v = Matrix::identity(n).into_vec();
    let mut sweeps = 0;
    while off_diagonal_norm(&a, n) >= OFF_DIAGONAL_TOL {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors.set(r, col, v[r * n + src]);
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// `(1 − sλ)^K` for every eigenvalue.
pub fn filter_coefficients(eigenvalues: &[f64], s: f64, k: u32) -> Vec<f64> {
    eigenvalues
        .iter()
        .map(|&lam| (1.0 - s * lam).powi(k as i32))
        .collect()
}

/// Applies `(I − sL)` to `h` `k` times through sparse products.
pub fn polynomial_filter_apply(l: &SparseOperator, h: &[f64], s: f64, k: u32) -> Vec<f64> {
    let mut cur = h.to_vec();
    for _ in 0..k {
        let lh = l.apply(&cur);
        for (c, x) in cur.iter_mut().zip(lh) {
            *c -= s * x;
        }
    }
    cur
}

/// Up to `max_nodes` nodes chosen breadth-first, starting from the
/// highest-degree node (lowest index on ties) and restarting from the next
/// such node whenever a component is exhausted. Returned in visit order.
pub fn bfs_sample(g: &Graph, max_nodes: usize) -> Vec<usize> {
    let n = g.n();
    if n <= max_nodes {
        return (0..n).collect();
    }
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by(|&a, &b| g.degree(b).cmp(&g.degree(a)).then(a.cmp(&b)));
    let mut seen = vec![false; n];
    let mut out = Vec::with_capacity(max_nodes);
    let mut queue = VecDeque::new();
    for &start in &by_degree {
        if out.len() == max_nodes {
            break;
        }
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            if out.len() == max_nodes {
                break;
            }
            out.push(u);
            for &v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        queue.clear();
    }
    out
}
