//! Gradients of the loss and the exact line searches along them.
//!
//! With residuals `r_l = diag(γ) A_l ξ − y_l` the loss is quadratic in each
//! block separately, so the minimizer of `υ ↦ f(ξ − υ d, γ)` is
//! `Σ⟨r_l, γ∘A_l d⟩ / Σ‖γ∘A_l d‖²`, and likewise for the gains with
//! `d∘A_l ξ` in place of `γ∘A_l d`. A vanishing denominator yields a zero
//! step.

use crate::error::Result;
use crate::geometry::project_zero_mean_in_place;
use crate::linalg::{dot, norm_sq};
use crate::scalar::Real;
use crate::sensing::{GainVector, SensingEnsemble, SignalVector, SnapshotSet};

/// Per-snapshot products `u_l = A_l ξ` and residuals `r_l = γ∘u_l − y_l`.
pub(crate) fn products_and_residuals<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    xi: &[T],
    gamma: &[T],
) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    (0..ensemble.p())
        .map(|l| {
            let u = ensemble.matrix(l).mul_vec(xi);
            let r = u
                .iter()
                .zip(gamma)
                .zip(snapshots.get(l))
                .map(|((&ui, &gi), &yi)| gi * ui - yi)
                .collect();
            (u, r)
        })
        .unzip()
}

fn check<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    xi: &SignalVector<T>,
    gamma: &GainVector<T>,
) -> Result<()> {
    ensemble.check_signal(xi.as_slice())?;
    ensemble.check_gains(gamma.as_slice())?;
    ensemble.check_snapshots(snapshots)
}

/// Zero-step convention for flat or ill-defined directions.
#[inline]
pub(crate) fn exact_step<T: Real>(num: T, den: T) -> T {
    if den > T::zero() && den.is_finite() && num.is_finite() {
        num / den
    } else {
        T::zero()
    }
}

/// `∇_ξ f = 1/(mp) Σ_l A_lᵀ diag(γ) r_l`.
pub fn grad_signal<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    xi: &SignalVector<T>,
    gamma: &GainVector<T>,
) -> Result<Vec<T>> {
    check(ensemble, snapshots, xi, gamma)?;
    let (_, residuals) = products_and_residuals(ensemble, snapshots, xi.as_slice(), gamma.as_slice());
    let mut grad = vec![T::zero(); ensemble.n()];
    for (l, r) in residuals.iter().enumerate() {
        let weighted: Vec<T> = r.iter().zip(gamma.as_slice()).map(|(&ri, &gi)| gi * ri).collect();
        ensemble.matrix(l).tr_mul_vec_acc(&weighted, &mut grad);
    }
    let scale = T::one() / T::of_usize(ensemble.m() * ensemble.p());
    grad.iter_mut().for_each(|v| *v *= scale);
    Ok(grad)
}

/// Gain gradient before projection: `1/(mp) Σ_l diag(A_l ξ) r_l`.
pub fn grad_gains<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    xi: &SignalVector<T>,
    gamma: &GainVector<T>,
) -> Result<Vec<T>> {
    check(ensemble, snapshots, xi, gamma)?;
    let (products, residuals) =
        products_and_residuals(ensemble, snapshots, xi.as_slice(), gamma.as_slice());
    let mut grad = vec![T::zero(); ensemble.m()];
    for (u, r) in products.iter().zip(&residuals) {
        for ((g, &ui), &ri) in grad.iter_mut().zip(u).zip(r) {
            *g += ui * ri;
        }
    }
    let scale = T::one() / T::of_usize(ensemble.m() * ensemble.p());
    grad.iter_mut().for_each(|v| *v *= scale);
    Ok(grad)
}

/// `∇⊥_γ f = P_{1⊥} ∇_γ f`; steps along it keep `Σγ` fixed.
pub fn grad_gains_projected<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    xi: &SignalVector<T>,
    gamma: &GainVector<T>,
) -> Result<Vec<T>> {
    let mut grad = grad_gains(ensemble, snapshots, xi, gamma)?;
    project_zero_mean_in_place(&mut grad);
    Ok(grad)
}

/// `argmin_υ f(ξ − υ d, γ)`.
pub fn line_search_signal<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    xi: &SignalVector<T>,
    gamma: &GainVector<T>,
    direction: &[T],
) -> Result<T> {
    check(ensemble, snapshots, xi, gamma)?;
    ensemble.check_signal(direction)?;
    let (_, residuals) = products_and_residuals(ensemble, snapshots, xi.as_slice(), gamma.as_slice());
    let (mut num, mut den) = (T::zero(), T::zero());
    for (l, r) in residuals.iter().enumerate() {
        let mut w = ensemble.matrix(l).mul_vec(direction);
        w.iter_mut().zip(gamma.as_slice()).for_each(|(wi, &gi)| *wi *= gi);
        num += dot(r, &w);
        den += norm_sq(&w);
    }
    Ok(exact_step(num, den))
}

/// `argmin_υ f(ξ, γ − υ d)`.
pub fn line_search_gains<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    xi: &SignalVector<T>,
    gamma: &GainVector<T>,
    direction: &[T],
) -> Result<T> {
    check(ensemble, snapshots, xi, gamma)?;
    ensemble.check_gains(direction)?;
    let (products, residuals) =
        products_and_residuals(ensemble, snapshots, xi.as_slice(), gamma.as_slice());
    let (mut num, mut den) = (T::zero(), T::zero());
    for (u, r) in products.iter().zip(&residuals) {
        for ((&ui, &ri), &di) in u.iter().zip(r).zip(direction) {
            let w = di * ui;
            num += ri * w;
            den += w * w;
        }
    }
    Ok(exact_step(num, den))
}
