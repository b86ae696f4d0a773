//! Graph signal denoising: recover a smooth `f` from a noisy signal `x` by
//! minimizing `g(f) = ‖f − x‖² + c · fᵀ L f`.
//!
//! The minimizer solves `(I + cL) f = x`. One gradient step from `x` with
//! step `ε` gives `(1 − 2εc) x + 2εc (I − L) x`, which for the augmented
//! Laplacian and `ε = 1/(2c)` is exactly the GCN propagation `Â x`.

use crate::error::{Error, Result};
use crate::graph::SparseOperator;

/// Largest graph solved with the dense closed form.
pub const MAX_DENSE_NODES: usize = 4096;

/// Consecutive objective increases that count as divergence.
const DIVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy)]
pub struct DenoiseProblem<'a> {
    pub x: &'a [f64],
    pub c: f64,
    pub laplacian: &'a SparseOperator,
}

impl<'a> DenoiseProblem<'a> {
    pub fn new(x: &'a [f64], c: f64, laplacian: &'a SparseOperator) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("smoothing coefficient {c} must be >= 0")));
        }
        if x.len() != laplacian.n() {
            return Err(Error::Shape {
                op: "denoise",
                left: (laplacian.n(), laplacian.n()),
                right: (x.len(), 1),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("signal contains non-finite values".into()));
        }
        Ok(Self { x, c, laplacian })
    }

    /// `g(f)`.
    pub fn objective(&self, f: &[f64]) -> f64 {
        let fidelity: f64 = f.iter().zip(self.x).map(|(a, b)| (a - b).powi(2)).sum();
        fidelity + self.c * smoothness(f, self.laplacian)
    }

    /// `∇g(f) = 2(f − x) + 2c L f`.
    pub fn gradient(&self, f: &[f64]) -> Vec<f64> {
        let lf = self.laplacian.apply(f);
        f.iter()
            .zip(self.x)
            .zip(lf)
            .map(|((fi, xi), li)| 2.0 * (fi - xi) + 2.0 * self.c * li)
            .collect()
    }

    /// Step sizes below this bound make gradient descent a contraction:
    /// the Hessian `2(I + cL)` has spectrum in `[2, 2(1 + c·λmax)]`, and
    /// `λmax` is bounded by the Gershgorin row sum.
    pub fn stable_step_bound(&self) -> f64 {
        1.0 / (1.0 + self.c * self.laplacian.gershgorin_bound())
    }
}

/// `fᵀ L f`.
pub fn smoothness(f: &[f64], laplacian: &SparseOperator) -> f64 {
    assert_eq!(f.len(), laplacian.n());
    laplacian.apply(f).iter().zip(f).map(|(a, b)| a * b).sum()
}

/// Solves `(I + cL) f = x` with a dense Cholesky factorization.
pub fn denoise_closed_form(p: &DenoiseProblem<'_>) -> Result<Vec<f64>> {
    let n = p.x.len();
    if n > MAX_DENSE_NODES {
        return Err(Error::Config(format!(
            "dense denoising limited to {MAX_DENSE_NODES} nodes, got {n}"
        )));
    }
    let mut a = p.laplacian.to_dense().map(|v| p.c * v).into_vec();
    for i in 0..n {
        a[i * n + i] += 1.0;
    }
    // In-place lower Cholesky factor.
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if diag <= 0.0 {
            return Err(Error::Unstable(format!(
                "I + cL not positive definite at pivot {j}"
            )));
        }
        let diag = diag.sqrt();
        a[j * n + j] = diag;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / diag;
        }
    }
    let mut y = p.x.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Ok(y)
}

/// `f − ε ∇g(f)`.
pub fn denoise_gradient_step(p: &DenoiseProblem<'_>, f: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::Config(format!("step size {step} must be > 0")));
    }
    let grad = p.gradient(f);
    Ok(f.iter().zip(grad).map(|(fi, gi)| fi - step * gi).collect())
}

#[derive(Debug, Clone)]
pub struct Iterate {
    pub f: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
}

/// Repeated gradient steps from `x` until successive iterates differ by less
/// than `tol` in max-norm, or `max_iters` is reached.
pub fn denoise_iterate(
    p: &DenoiseProblem<'_>,
    step: f64,
    max_iters: usize,
    tol: f64,
) -> Result<Iterate> {
    denoise_iterate_from(p, p.x.to_vec(), step, max_iters, tol)
}

pub fn denoise_iterate_from(
    p: &DenoiseProblem<'_>,
    mut f: Vec<f64>,
    step: f64,
    max_iters: usize,
    tol: f64,
) -> Result<Iterate> {
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance {tol} must be > 0")));
    }
    let bound = p.stable_step_bound();
    if step >= bound {
        return Err(Error::Unstable(format!(
            "step {step} is not below the stability bound {bound:.6}; use a smaller step"
        )));
    }
    let mut last_obj = p.objective(&f);
    let mut growth = 0;
    for it in 1..=max_iters {
        let next = denoise_gradient_step(p, &f, step)?;
        let delta = next
            .iter()
            .zip(&f)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let obj = p.objective(&next);
        if !obj.is_finite() {
            return Err(Error::Unstable(format!("iterate became non-finite at step {it}")));
        }
        growth = if obj > last_obj { growth + 1 } else { 0 };
        if growth >= DIVERGENCE_WINDOW {
            return Err(Error::Unstable(format!(
                "objective grew for {DIVERGENCE_WINDOW} consecutive steps; use a smaller step"
            )));
        }
        last_obj = obj;
        f = next;
        if delta < tol {
            return Ok(Iterate {
                f,
                iters: it,
                converged: true,
            });
        }
    }
    Ok(Iterate {
        f,
        iters: max_iters,
        converged: false,
    })
}
