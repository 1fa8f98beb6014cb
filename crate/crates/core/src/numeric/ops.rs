//! Value-level kernels shared by the tape and by inference code.

use super::matrix::Matrix;
use crate::error::{Result, SalsaError};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    m.check_finite("softmax_rows")?;
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Per-row normalisation followed by an elementwise affine map.
///
/// `gain` and `bias` are `1 × cols`.
pub fn layer_norm(m: &Matrix, gain: &Matrix, bias: &Matrix, eps: f64) -> Result<Matrix> {
    let (out, _, _) = layer_norm_parts(m, gain, bias, eps)?;
    Ok(out)
}

/// Returns the output, the normalised input and each row's `1/σ`.
pub(crate) fn layer_norm_parts(
    m: &Matrix,
    gain: &Matrix,
    bias: &Matrix,
    eps: f64,
) -> Result<(Matrix, Matrix, Vec<f64>)> {
    let c = m.cols();
    if c == 0 {
        return Err(SalsaError::InvalidArgument("layer_norm on empty rows".into()));
    }
    if gain.shape() != (1, c) || bias.shape() != (1, c) {
        return Err(crate::error::shape_err(
            "layer_norm",
            format!("gain {:?} / bias {:?} for {c} columns", gain.shape(), bias.shape()),
        ));
    }
    let mut xhat = m.clone();
    let mut out = Matrix::zeros(m.rows(), c);
    let mut inv_std = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = xhat.row_mut(r);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
        inv_std.push(inv);
        let o = out.row_mut(r);
        for j in 0..c {
            o[j] = xhat.get(r, j) * gain.get(0, j) + bias.get(0, j);
        }
    }
    Ok((out, xhat, inv_std))
}
