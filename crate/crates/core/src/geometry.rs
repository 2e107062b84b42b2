//! Constraint geometry: hard thresholding onto k-sparse vectors, the
//! zero-mean projector, Euclidean projection onto the gain set
//! `G_ρ = 1 + (ρ·B∞ ∩ 1⊥)`, and the canonical scaling of a `(x, g)` pair.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sensing::{GainVector, SignalVector};

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!(
            "gain radius rho={rho} must lie in [0, 1)"
        )));
    }
    Ok(())
}

/// Slack on each box constraint `|v_i − 1| ≤ ρ`.
pub fn box_tolerance<T: Real>() -> T {
    T::of(1e-12).max(T::epsilon() * T::of(16.0))
}

/// Slack on the sum constraint `Σ v_i = m`.
pub fn sum_tolerance<T: Real>(m: usize) -> T {
    T::of(1e-9).max(T::epsilon() * T::of(16.0)) * T::of_usize(m.max(1))
}

/// The feasible gain set `G_ρ` in dimension `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainFeasibleSet {
    pub m: usize,
    pub rho: f64,
}

impl GainFeasibleSet {
    pub fn new(m: usize, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        if m == 0 {
            return Err(Error::InvalidDimensions("m must be positive".into()));
        }
        Ok(Self { m, rho })
    }

    pub fn contains<T: Real>(&self, v: &[T]) -> bool {
        if v.len() != self.m {
            return false;
        }
        let rho = T::of(self.rho);
        let in_box = v
            .iter()
            .all(|&vi| (vi - T::one()).abs() <= rho + box_tolerance::<T>());
        let offset: T = v.iter().map(|&vi| vi - T::one()).sum();
        in_box && offset.abs() <= sum_tolerance::<T>(self.m)
    }

    pub fn project<T: Real>(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.m {
            return Err(Error::ShapeMismatch(format!(
                "vector of length {} for m={}",
                v.len(),
                self.m
            )));
        }
        project_gain_box(v, self.rho)
    }
}

/// Indices of the `k` largest magnitudes; ties keep the lower index.
pub fn top_k_indices<T: Real>(u: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..u.len()).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < u.len() {
        let key = |i: usize| u[i].to_f64_lossy().abs();
        idx.select_nth_unstable_by(k - 1, |&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Keep the `k` largest-magnitude entries of `u` and zero the rest.
pub fn hard_threshold<T: Real>(u: &[T], k: usize) -> Result<Vec<T>> {
    if k > u.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot keep {k} entries of a length-{} vector",
            u.len()
        )));
    }
    let mut out = vec![T::zero(); u.len()];
    for i in top_k_indices(u, k) {
        out[i] = u[i];
    }
    Ok(out)
}

/// `v − mean(v)·1`.
pub fn project_zero_mean<T: Real>(v: &[T]) -> Vec<T> {
    let mut out = v.to_vec();
    project_zero_mean_in_place(&mut out);
    out
}

pub fn project_zero_mean_in_place<T: Real>(v: &mut [T]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().copied().sum::<T>() / T::of_usize(v.len());
    v.iter_mut().for_each(|x| *x -= mean);
}

#[inline]
fn clip<T: Real>(t: T, rho: T) -> T {
    t.max(-rho).min(rho)
}

const BISECTION_MAX_STEPS: usize = 300;

/// Euclidean projection of `v` onto `G_ρ`:
/// `1 + clip(v − 1 − λ·1, −ρ, ρ)` with the shift `λ` chosen so the clipped
/// offsets sum to zero. `λ` is bracketed and bisected, then refined in
/// closed form on the active set found by bisection.
pub fn project_gain_box<T: Real>(v: &[T], rho: f64) -> Result<Vec<T>> {
    check_rho(rho)?;
    if v.is_empty() {
        return Ok(Vec::new());
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("non-finite gain vector".into()));
    }
    let m = v.len();
    if rho == 0.0 {
        return Ok(vec![T::one(); m]);
    }
    let r = T::of(rho);
    let d: Vec<T> = v.iter().map(|&x| x - T::one()).collect();
    let clipped_sum = |lambda: T| d.iter().map(|&di| clip(di - lambda, r)).sum::<T>();

    // s(λ) is non-increasing: s(lo) = mρ, s(hi) = −mρ.
    let dmin = d.iter().copied().fold(T::infinity(), T::min);
    let dmax = d.iter().copied().fold(T::neg_infinity(), T::max);
    let (mut lo, mut hi) = (dmin - r, dmax + r);
    let two = T::of(2.0);
    for _ in 0..BISECTION_MAX_STEPS {
        let mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        let s = clipped_sum(mid);
        if s == T::zero() {
            lo = mid;
            hi = mid;
            break;
        } else if s > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut lambda = (lo + hi) / two;

    // On the active set the root is linear in λ.
    let (mut free_sum, mut free, mut upper, mut lower) = (T::zero(), 0usize, 0usize, 0usize);
    for &di in &d {
        let t = di - lambda;
        if t >= r {
            upper += 1;
        } else if t <= -r {
            lower += 1;
        } else {
            free += 1;
            free_sum += di;
        }
    }
    if free > 0 {
        let exact = (free_sum + r * T::of_usize(upper) - r * T::of_usize(lower)) / T::of_usize(free);
        if clipped_sum(exact).abs() <= clipped_sum(lambda).abs() {
            lambda = exact;
        }
    }

    let out: Vec<T> = d.iter().map(|&di| T::one() + clip(di - lambda, r)).collect();
    let residual: T = out.iter().map(|&w| w - T::one()).sum();
    if residual.abs() > sum_tolerance::<T>(m) {
        return Err(Error::Internal(format!(
            "gain projection did not converge (offset sum {residual})"
        )));
    }
    Ok(out)
}

/// Rescale `(x, g)` to `(αx, g/α)` with `α = Σg/m`, so the gains sum to `m`.
pub fn normalize_gains<T: Real>(
    x: &SignalVector<T>,
    g: &GainVector<T>,
) -> Result<(SignalVector<T>, GainVector<T>)> {
    if g.is_empty() {
        return Err(Error::InvalidDimensions("empty gain vector".into()));
    }
    if !g.is_positive() {
        return Err(Error::InvalidParameter(
            "gains must be strictly positive to normalize".into(),
        ));
    }
    let alpha = g.sum() / T::of_usize(g.len());
    Ok((x.scaled(alpha), g.scaled(T::one() / alpha)))
}
