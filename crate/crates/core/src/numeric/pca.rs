use nalgebra::{DMatrix, SymmetricEigen};

use super::matrix::Matrix;
use crate::error::{shape_err, Result, SalsaError};

pub const WHITEN_EPS: f64 = 1e-8;

/// Linear map onto the leading principal components, scaled to unit variance.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaWhitener {
    pub mean: Vec<f64>,
    /// `e_out × e_in`; row `i` is the `i`-th eigenvector divided by `√λᵢ`.
    pub projection: Matrix,
    /// Eigenvalues of the kept components, descending.
    pub eigenvalues: Vec<f64>,
}

impl PcaWhitener {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.rows()
    }

    /// `projection · (v − mean)`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        apply_whitener(self, v)
    }
}

/// Fits a whitener on the rows of `x`.
///
/// Eigenvalues below `eps` are clamped to `eps` before scaling, so
/// components of a rank-deficient covariance stay finite while every
/// well-conditioned component comes out with unit variance.
pub fn fit_pca_whitener(x: &Matrix, e_out: usize, eps: f64) -> Result<PcaWhitener> {
    let (n, e_in) = x.shape();
    if e_out == 0 || e_out > e_in {
        return Err(SalsaError::InvalidArgument(format!(
            "whitened dimension {e_out} must be in 1..={e_in}"
        )));
    }
    if n <= e_out {
        return Err(SalsaError::InvalidArgument(format!(
            "need more than {e_out} samples to fit, got {n}"
        )));
    }
    x.check_finite("fit_pca_whitener")?;

    let mut mean = vec![0.0; e_in];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, e_in, |r, c| x.get(r, c) - mean[c]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..e_in).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut projection = Matrix::zeros(e_out, e_in);
    let mut eigenvalues = Vec::with_capacity(e_out);
    for (row, &idx) in order.iter().take(e_out).enumerate() {
        let lambda = eig.eigenvalues[idx];
        let col = eig.eigenvectors.column(idx);
        // sign convention: largest-magnitude entry positive
        let pivot = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        let s = sign / lambda.max(eps).sqrt();
        for (c, v) in col.iter().enumerate() {
            projection.set(row, c, v * s);
        }
        eigenvalues.push(lambda);
    }
    Ok(PcaWhitener {
        mean,
        projection,
        eigenvalues,
    })
}

pub fn apply_whitener(w: &PcaWhitener, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != w.input_dim() {
        return Err(shape_err(
            "apply_whitener",
            format!("vector of length {} for input dimension {}", v.len(), w.input_dim()),
        ));
    }
    let centered: Vec<f64> = v.iter().zip(&w.mean).map(|(a, m)| a - m).collect();
    Ok((0..w.output_dim())
        .map(|r| super::matrix::dot(w.projection.row(r), &centered))
        .collect())
}

/// Sample covariance (`1/(n−1)`) of the rows of `x`.
pub fn sample_covariance(x: &Matrix) -> Matrix {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v / n as f64;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for r in 0..n {
        let row = x.row(r);
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                let v = cov.get(i, j) + di * (row[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / (n as f64 - 1.0);
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    cov
}
