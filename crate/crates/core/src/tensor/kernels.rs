//! Dense and sparse-dense product kernels.
//!
//! Every kernel computes each output row independently with a fixed
//! accumulation order, so the sequential and the rayon path produce
//! bitwise-identical results. The rayon path is compiled only with the
//! `parallel` feature; without it `Parallelism::Parallel` silently runs
//! sequentially.

use crate::graph::SparseOperator;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Parallel,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }
}

/// Below this many multiply-adds the thread hand-off costs more than it saves.
#[cfg(feature = "parallel")]
const PAR_MIN_WORK: usize = 1 << 15;

fn for_each_row<F>(out: &mut [f64], cols: usize, work: usize, par: Parallelism, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if par == Parallelism::Parallel && work >= PAR_MIN_WORK {
        use rayon::prelude::*;
        out.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
        return;
    }
    let _ = (work, par);
    for (r, row) in out.chunks_mut(cols).enumerate() {
        f(r, row);
    }
}

/// `a · b`. Zero entries of `a` are skipped, which makes sparse
/// bag-of-words feature matrices cheap.
pub fn matmul(a: &Matrix, b: &Matrix, par: Parallelism) -> Matrix {
    assert_eq!(a.cols(), b.rows());
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(m, n);
    let bs = b.as_slice();
    for_each_row(out.as_mut_slice(), n, m * k * n, par, |i, row| {
        for (p, &x) in a.row(i).iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let brow = &bs[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    });
    out
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix, par: Parallelism) -> Matrix {
    assert_eq!(a.rows(), b.rows());
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(k, n);
    let (as_, bs) = (a.as_slice(), b.as_slice());
    for_each_row(out.as_mut_slice(), n, m * k * n, par, |p, row| {
        for i in 0..m {
            let x = as_[i * k + p];
            if x == 0.0 {
                continue;
            }
            let brow = &bs[i * n..(i + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    });
    out
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix, par: Parallelism) -> Matrix {
    assert_eq!(a.cols(), b.cols());
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = Matrix::zeros(m, n);
    for_each_row(out.as_mut_slice(), n, m * k * n, par, |i, row| {
        let arow = a.row(i);
        for (j, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(b.row(j)) {
                acc += x * y;
            }
            *o = acc;
        }
    });
    out
}

/// Sparse-dense product `op · h`.
pub fn spmm(op: &SparseOperator, h: &Matrix, par: Parallelism) -> Matrix {
    assert_eq!(op.n(), h.rows());
    let d = h.cols();
    let mut out = Matrix::zeros(op.n(), d);
    let (offsets, targets, weights) = (op.offsets(), op.targets(), op.weights());
    let hs = h.as_slice();
    for_each_row(out.as_mut_slice(), d, weights.len() * d, par, |i, row| {
        for e in offsets[i]..offsets[i + 1] {
            let w = weights[e];
            let t = targets[e];
            for (o, &y) in row.iter_mut().zip(&hs[t * d..(t + 1) * d]) {
                *o += w * y;
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let data = (0..rows * cols)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for p in 0..a.cols() {
                    acc += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn hand_computed_product() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        let c = matmul(&a, &b, Parallelism::Sequential);
        assert_eq!(c.as_slice(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_variants_match_naive() {
        let a = rand_matrix(40, 30, 1);
        let b = rand_matrix(40, 20, 2);
        let c = rand_matrix(25, 30, 3);
        let tn = matmul_tn(&a, &b, Parallelism::Parallel);
        assert!(tn.max_abs_diff(&naive(&a.transpose(), &b)) < 1e-12);
        let nt = matmul_nt(&a, &c, Parallelism::Parallel);
        assert!(nt.max_abs_diff(&naive(&a, &c.transpose())) < 1e-12);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let a = rand_matrix(200, 120, 4);
        let b = rand_matrix(120, 64, 5);
        let s = matmul(&a, &b, Parallelism::Sequential);
        let p = matmul(&a, &b, Parallelism::Parallel);
        assert!(s.bit_eq(&p));
        let g = rand_matrix(200, 64, 6);
        assert!(matmul_tn(&a, &g, Parallelism::Sequential)
            .bit_eq(&matmul_tn(&a, &g, Parallelism::Parallel)));
        assert!(matmul_nt(&g, &b, Parallelism::Sequential)
            .bit_eq(&matmul_nt(&g, &b, Parallelism::Parallel)));
    }
}
