use super::matrix::{dot, l2_norm, Matrix};
use crate::error::{Result, SalsaError};

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    /// Unit norm, oriented so the largest-magnitude entry is positive.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Leading eigenpair of a symmetric non-negative matrix.
///
/// Iterates on `M + s·I` with `s` the mean row sum, which keeps bipartite
/// graphs (eigenvalues `±λ`) from oscillating. Stops once
/// `‖M·v − λ·v‖ < tol·λ`. A zero matrix converges immediately with `λ = 0`.
pub fn power_iteration(m: &Matrix, tol: f64, max_iter: usize) -> Result<EigenPair> {
    let n = m.rows();
    if n == 0 || m.cols() != n {
        return Err(SalsaError::InvalidArgument(format!(
            "power iteration needs a non-empty square matrix, got {:?}",
            m.shape()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let a = m.get(i, j);
            if !a.is_finite() || a < 0.0 {
                return Err(SalsaError::InvalidArgument(format!(
                    "entry ({i},{j}) = {a} is not a finite non-negative value"
                )));
            }
            if j > i && (a - m.get(j, i)).abs() > 1e-9 {
                return Err(SalsaError::InvalidArgument(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }

    let shift = (0..n).map(|r| m.row(r).iter().sum::<f64>()).sum::<f64>() / n as f64;
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut mv = vec![0.0; n];
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        mat_vec(m, &v, &mut mv);
        lambda = dot(&v, &mv);
        if l2_norm(&mv) == 0.0 {
            return Ok(EigenPair {
                value: 0.0,
                vector: orient(v),
                iterations: it,
            });
        }
        residual = mv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual < tol * lambda {
            return Ok(EigenPair {
                value: lambda,
                vector: orient(v),
                iterations: it,
            });
        }
        for (vi, x) in v.iter_mut().zip(&mv) {
            *vi = x + shift * *vi;
        }
        let norm = l2_norm(&v);
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Err(SalsaError::NoConvergence {
        iterations: max_iter,
        residual,
        eigenvalue: lambda,
        eigenvector: orient(v),
    })
}

fn mat_vec(m: &Matrix, v: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(r), v);
    }
}

fn orient(mut v: Vec<f64>) -> Vec<f64> {
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);
    if pivot < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}
