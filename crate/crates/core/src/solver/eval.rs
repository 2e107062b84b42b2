//! Recovery metrics: relative errors after canonical scaling, RSNR and the
//! success criterion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::normalize_gains;
use crate::linalg;
use crate::scalar::Real;
use crate::sensing::{GainVector, SignalVector};

use super::SolverResult;

/// Success threshold in decibels.
pub const SUCCESS_DB: f64 = -60.0;
/// Success threshold on the worse relative error, `10^(−60/20)`.
pub const ZETA: f64 = 1e-3;
/// RSNR reported for an exact recovery.
pub const RSNR_CAP_DB: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rel_err_x: f64,
    pub rel_err_g: f64,
    pub rsnr_x_db: f64,
    pub rsnr_g_db: f64,
    pub success: bool,
}

/// `−20 log10(rel_err)`, capped at [`RSNR_CAP_DB`].
pub fn rsnr_db(rel_err: f64) -> f64 {
    if rel_err.is_nan() {
        return f64::NEG_INFINITY;
    }
    (-20.0 * rel_err.log10()).min(RSNR_CAP_DB)
}

/// `‖est − truth‖ / ‖truth‖`; non-finite results become `+∞`.
pub fn relative_error<T: Real>(est: &[T], truth: &[T]) -> f64 {
    let e = (linalg::dist(est, truth) / linalg::norm(truth)).to_f64_lossy();
    if e.is_finite() {
        e
    } else {
        f64::INFINITY
    }
}

/// Compare an estimate with the truth after bringing both to unit mean gain.
pub fn evaluate_estimates<T: Real>(
    truth_x: &SignalVector<T>,
    truth_g: &GainVector<T>,
    x_hat: &SignalVector<T>,
    g_hat: &GainVector<T>,
) -> Result<EvalReport> {
    if truth_x.len() != x_hat.len() || truth_g.len() != g_hat.len() {
        return Err(Error::ShapeMismatch(format!(
            "truth ({}, {}) vs estimate ({}, {})",
            truth_x.len(),
            truth_g.len(),
            x_hat.len(),
            g_hat.len()
        )));
    }
    if linalg::norm(truth_x.as_slice()) == T::zero() {
        return Err(Error::InvalidParameter("zero-norm true signal".into()));
    }
    let (tx, tg) = normalize_gains(truth_x, truth_g)?;
    // Estimates are compared as-is when their gain mean is not a usable scale.
    let alpha = g_hat.sum() / T::of_usize(g_hat.len());
    let (ex, eg) = if alpha > T::zero() && alpha.is_finite() {
        (x_hat.scaled(alpha), g_hat.scaled(T::one() / alpha))
    } else {
        (x_hat.clone(), g_hat.clone())
    };
    let rel_err_x = relative_error(ex.as_slice(), tx.as_slice());
    let rel_err_g = relative_error(eg.as_slice(), tg.as_slice());
    Ok(EvalReport {
        rel_err_x,
        rel_err_g,
        rsnr_x_db: rsnr_db(rel_err_x),
        rsnr_g_db: rsnr_db(rel_err_g),
        success: rel_err_x.max(rel_err_g) < ZETA,
    })
}

pub fn evaluate<T: Real>(
    truth_x: &SignalVector<T>,
    truth_g: &GainVector<T>,
    result: &SolverResult<T>,
) -> Result<EvalReport> {
    evaluate_estimates(truth_x, truth_g, &result.x_hat, &result.g_hat)
}
