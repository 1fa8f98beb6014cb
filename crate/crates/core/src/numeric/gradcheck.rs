//! Central finite-difference verification of tape gradients.

use rand::Rng;

use super::tape::{ParamId, ParamSet, Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Number of coordinates sampled (with replacement) across all parameters.
    pub samples: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            samples: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares analytic gradients of `f` against central differences.
///
/// Returns the maximum over sampled coordinates of
/// `|analytic − numeric| / max(1e-8, |numeric|)`. Parameter values are
/// restored and gradients cleared before returning.
pub fn finite_diff_check<F, R>(
    params: &mut ParamSet,
    f: F,
    cfg: GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
    R: Rng + ?Sized,
{
    params.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    tape.backward(loss, params)?;

    let ids: Vec<ParamId> = params.ids().collect();
    let total = params.num_scalars();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    if total == 0 {
        return Ok(report);
    }

    let eval = |params: &ParamSet| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, params)?;
        t.scalar(l)
    };

    for _ in 0..cfg.samples {
        let mut flat = rng.random_range(0..total);
        let mut which = ids[0];
        for &id in &ids {
            let n = params.get(id).value.len();
            if flat < n {
                which = id;
                break;
            }
            flat -= n;
        }
        let analytic = params.get(which).grad.as_slice()[flat];
        let original = params.get(which).value.as_slice()[flat];

        params.get_mut(which).value.as_mut_slice()[flat] = original + cfg.eps;
        let plus = eval(params)?;
        params.get_mut(which).value.as_mut_slice()[flat] = original - cfg.eps;
        let minus = eval(params)?;
        params.get_mut(which).value.as_mut_slice()[flat] = original;

        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let rel = (analytic - numeric).abs() / numeric.abs().max(1e-8);
        report.coords_checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((params.get(which).name.clone(), flat, analytic, numeric));
        }
    }
    params.zero_grad();
    Ok(report)
}
