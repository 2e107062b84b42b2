//! BC-IHT: projected gradient descent on the bilinear least-squares loss,
//! with hard thresholding of the signal in a sparsity basis and zero-mean
//! steps on the gains. Also hosts the uncalibrated IHT baseline and the
//! recovery metrics.

mod eval;
mod gradients;

pub use eval::{evaluate, evaluate_estimates, relative_error, rsnr_db, EvalReport, RSNR_CAP_DB, SUCCESS_DB, ZETA};
pub use gradients::{
    grad_gains, grad_gains_projected, grad_signal, line_search_gains, line_search_signal,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, project_zero_mean_in_place};
use crate::linalg::relative_change;
use crate::scalar::Real;
use crate::sensing::{backproject_init, GainVector, SensingEnsemble, SignalVector, SnapshotSet};
use crate::wavelet::WaveletBasis;
use gradients::exact_step;

pub const DEFAULT_STOP_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITERS: usize = 5000;

/// Per-snapshot work is spread over the rayon pool above this many matrix
/// entries per iteration.
const PARALLEL_ENTRIES: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SolverConfig<T: Real> {
    /// Nonzero coefficients kept by the thresholding step.
    pub k: usize,
    pub rho: f64,
    /// Both relative block changes must fall below this to stop.
    pub stop_tol: f64,
    pub max_iters: usize,
    /// Project the gain iterate onto `G_ρ` after each step.
    pub project_gains: bool,
    /// Sparsity basis; canonical basis when `None`.
    #[serde(default)]
    pub basis: Option<WaveletBasis<T>>,
}

impl<T: Real> SolverConfig<T> {
    pub fn new(k: usize, rho: f64) -> Self {
        Self {
            k,
            rho,
            stop_tol: DEFAULT_STOP_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            project_gains: false,
            basis: None,
        }
    }

    pub fn with_basis(mut self, basis: WaveletBasis<T>) -> Self {
        self.basis = Some(basis);
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.stop_tol.is_nan() || self.stop_tol <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "stop_tol={} must be positive",
                self.stop_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        geometry::check_rho(self.rho)?;
        if self.k > n {
            return Err(Error::InvalidParameter(format!(
                "sparsity k={} exceeds n={n}",
                self.k
            )));
        }
        if let Some(b) = &self.basis {
            if b.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "basis spans {} pixels, signal has n={n}",
                    b.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    /// The loss became non-finite.
    Diverged,
}

/// One row of the iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Loss at the iterate the step started from.
    pub loss: f64,
    pub signal_change: f64,
    pub gain_change: f64,
    pub step_signal: f64,
    pub step_gains: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SolverResult<T> {
    pub x_hat: SignalVector<T>,
    pub g_hat: GainVector<T>,
    /// Basis coefficients of `x_hat` when a basis other than the identity
    /// was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<T>>,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<IterationRecord>,
}

impl<T: Real> SolverResult<T> {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Everything computed during one iteration, exposed to observers.
#[derive(Debug)]
pub struct StepView<'a, T> {
    pub iteration: usize,
    pub xi: &'a [T],
    pub gamma: &'a [T],
    pub loss: T,
    pub grad_signal: &'a [T],
    pub grad_gains: &'a [T],
    pub step_signal: T,
    pub step_gains: T,
    /// `ξ − μ_ξ ∇_ξ f`, before thresholding.
    pub signal_trial: &'a [T],
    /// `γ − μ_γ ∇⊥_γ f`, before any projection.
    pub gain_trial: &'a [T],
    pub next_xi: &'a [T],
    /// Thresholded basis coefficients of `next_xi`.
    pub next_coeffs: &'a [T],
    pub next_gamma: &'a [T],
}

/// Buffers for one snapshot.
struct SnapshotWork<T> {
    product: Vec<T>,
    residual: Vec<T>,
    back: Vec<T>,
    loss: T,
}

struct Evaluation<T> {
    loss: T,
    grad_signal: Vec<T>,
    grad_gains: Vec<T>,
    step_signal: T,
    step_gains: T,
}

struct Engine<'a, T: Real> {
    ensemble: &'a SensingEnsemble<T>,
    snapshots: &'a SnapshotSet<T>,
    work: Vec<SnapshotWork<T>>,
    parallel: bool,
}

impl<'a, T: Real> Engine<'a, T> {
    fn new(ensemble: &'a SensingEnsemble<T>, snapshots: &'a SnapshotSet<T>) -> Self {
        let (m, n, p) = (ensemble.m(), ensemble.n(), ensemble.p());
        let work = (0..p)
            .map(|_| SnapshotWork {
                product: vec![T::zero(); m],
                residual: vec![T::zero(); m],
                back: vec![T::zero(); n],
                loss: T::zero(),
            })
            .collect();
        Self {
            ensemble,
            snapshots,
            work,
            parallel: p > 1 && m * n * p >= PARALLEL_ENTRIES,
        }
    }

    fn for_each_snapshot(&mut self, f: impl Fn(usize, &mut SnapshotWork<T>) + Sync + Send) {
        if self.parallel {
            self.work.par_iter_mut().enumerate().for_each(|(l, w)| f(l, w));
        } else {
            self.work.iter_mut().enumerate().for_each(|(l, w)| f(l, w));
        }
    }

    /// Loss, both gradients and both exact steps at `(ξ, γ)`. Reductions
    /// over snapshots always run in index order.
    fn evaluate(&mut self, xi: &[T], gamma: &[T], calibrate: bool) -> Evaluation<T> {
        let (m, n, p) = (self.ensemble.m(), self.ensemble.n(), self.ensemble.p());
        let scale = T::one() / T::of_usize(m * p);
        let (ensemble, snapshots) = (self.ensemble, self.snapshots);

        self.for_each_snapshot(|l, w| {
            let a = ensemble.matrix(l);
            a.mul_vec_into(xi, &mut w.product);
            let y = snapshots.get(l);
            let mut acc = T::zero();
            for i in 0..m {
                let r = gamma[i] * w.product[i] - y[i];
                w.residual[i] = r;
                acc += r * r;
            }
            w.loss = acc;
            let weighted: Vec<T> = w.residual.iter().zip(gamma).map(|(&r, &g)| g * r).collect();
            w.back.iter_mut().for_each(|v| *v = T::zero());
            a.tr_mul_vec_acc(&weighted, &mut w.back);
        });

        let mut loss = T::zero();
        let mut grad_signal = vec![T::zero(); n];
        let mut grad_gains = vec![T::zero(); m];
        for w in &self.work {
            loss += w.loss;
            grad_signal.iter_mut().zip(&w.back).for_each(|(g, &b)| *g += b);
            if calibrate {
                for ((g, &u), &r) in grad_gains.iter_mut().zip(&w.product).zip(&w.residual) {
                    *g += u * r;
                }
            }
        }
        loss *= scale / T::of(2.0);
        grad_signal.iter_mut().for_each(|v| *v *= scale);
        grad_gains.iter_mut().for_each(|v| *v *= scale);
        project_zero_mean_in_place(&mut grad_gains);

        // Exact steps need A_l d for the signal direction d.
        let direction = &grad_signal;
        let partial: Vec<(T, T, T, T)> = {
            let work = &self.work;
            let per = |l: usize| {
                let w = &work[l];
                let ad = ensemble.matrix(l).mul_vec(direction);
                let (mut ns, mut ds) = (T::zero(), T::zero());
                for i in 0..m {
                    let v = gamma[i] * ad[i];
                    ns += w.residual[i] * v;
                    ds += v * v;
                }
                let (mut ng, mut dg) = (T::zero(), T::zero());
                if calibrate {
                    for ((gg, a), r) in grad_gains.iter().zip(&w.product).zip(&w.residual) {
                        let v = *gg * *a;
                        ng += *r * v;
                        dg += v * v;
                    }
                }
                (ns, ds, ng, dg)
            };
            if self.parallel {
                (0..p).into_par_iter().map(per).collect()
            } else {
                (0..p).map(per).collect()
            }
        };
        let (mut ns, mut ds, mut ng, mut dg) = (T::zero(), T::zero(), T::zero(), T::zero());
        for (a, b, c, d) in partial {
            ns += a;
            ds += b;
            ng += c;
            dg += d;
        }
        Evaluation {
            loss,
            grad_signal,
            grad_gains,
            step_signal: exact_step(ns, ds),
            step_gains: if calibrate { exact_step(ng, dg) } else { T::zero() },
        }
    }
}

fn threshold_in_basis<T: Real>(
    v: &[T],
    k: usize,
    basis: Option<&WaveletBasis<T>>,
) -> Result<(Vec<T>, Vec<T>)> {
    match basis {
        None => {
            let x = geometry::hard_threshold(v, k)?;
            Ok((x.clone(), x))
        }
        Some(b) => {
            let z = geometry::hard_threshold(&b.analyze(v)?, k)?;
            Ok((b.synthesize(&z)?, z))
        }
    }
}

fn all_finite<T: Real>(v: &[T]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn run<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    config: &SolverConfig<T>,
    calibrate: bool,
    mut observer: impl FnMut(&StepView<'_, T>),
) -> Result<SolverResult<T>> {
    ensemble.check_snapshots(snapshots)?;
    config.validate(ensemble.n())?;
    let basis = config.basis.as_ref();
    let tol = T::of(config.stop_tol);

    let mut xi = backproject_init(ensemble, snapshots)?.into_vec();
    let mut gamma = vec![T::one(); ensemble.m()];
    let mut coeffs: Option<Vec<T>> = None;
    let mut engine = Engine::new(ensemble, snapshots);
    let mut trace = Vec::new();
    let mut termination = Termination::MaxIters;
    let mut idle = 0usize;
    let mut iterations = 0usize;

    for iteration in 0..config.max_iters {
        let ev = engine.evaluate(&xi, &gamma, calibrate);
        if !ev.loss.is_finite() {
            termination = Termination::Diverged;
            break;
        }
        let signal_trial: Vec<T> = xi
            .iter()
            .zip(&ev.grad_signal)
            .map(|(&x, &g)| x - ev.step_signal * g)
            .collect();
        let (next_xi, next_coeffs) = threshold_in_basis(&signal_trial, config.k, basis)?;

        let gain_trial: Vec<T> = gamma
            .iter()
            .zip(&ev.grad_gains)
            .map(|(&g, &d)| g - ev.step_gains * d)
            .collect();
        let next_gamma = if calibrate && config.project_gains && all_finite(&gain_trial) {
            geometry::project_gain_box(&gain_trial, config.rho)?
        } else {
            gain_trial.clone()
        };

        let signal_change = relative_change(&next_xi, &xi);
        let gain_change = relative_change(&next_gamma, &gamma);

        observer(&StepView {
            iteration,
            xi: &xi,
            gamma: &gamma,
            loss: ev.loss,
            grad_signal: &ev.grad_signal,
            grad_gains: &ev.grad_gains,
            step_signal: ev.step_signal,
            step_gains: ev.step_gains,
            signal_trial: &signal_trial,
            gain_trial: &gain_trial,
            next_xi: &next_xi,
            next_coeffs: &next_coeffs,
            next_gamma: &next_gamma,
        });
        trace.push(IterationRecord {
            loss: ev.loss.to_f64_lossy(),
            signal_change: signal_change.to_f64_lossy(),
            gain_change: gain_change.to_f64_lossy(),
            step_signal: ev.step_signal.to_f64_lossy(),
            step_gains: ev.step_gains.to_f64_lossy(),
        });

        xi = next_xi;
        gamma = next_gamma;
        coeffs = basis.map(|_| next_coeffs);
        iterations = iteration + 1;

        if ev.step_signal == T::zero() && ev.step_gains == T::zero() {
            idle += 1;
        } else {
            idle = 0;
        }
        if (signal_change < tol && gain_change < tol) || idle >= 2 {
            termination = Termination::Converged;
            break;
        }
        if !all_finite(&xi) || !all_finite(&gamma) {
            termination = Termination::Diverged;
            break;
        }
    }

    Ok(SolverResult {
        x_hat: SignalVector::new(xi),
        g_hat: GainVector::new(gamma),
        coefficients: coeffs,
        iterations,
        termination,
        trace,
    })
}

/// Blind calibration by iterative hard thresholding.
///
/// Starts from the backprojection `ξ_0` and `γ_0 = 1`. Each iteration
/// evaluates both gradients and exact steps at the current pair, then
/// updates `ξ ← Z H_k[Zᵀ(ξ − μ_ξ ∇_ξ f)]` and `γ ← γ − μ_γ ∇⊥_γ f`
/// (projected onto `G_ρ` when `project_gains` is set).
pub fn bc_iht_solve<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    config: &SolverConfig<T>,
) -> Result<SolverResult<T>> {
    run(ensemble, snapshots, config, true, |_| {})
}

/// [`bc_iht_solve`] with a callback invoked once per iteration.
pub fn bc_iht_solve_observed<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    config: &SolverConfig<T>,
    observer: impl FnMut(&StepView<'_, T>),
) -> Result<SolverResult<T>> {
    run(ensemble, snapshots, config, true, observer)
}

/// IHT with exact line search on the stacked system, gains fixed at `1`.
pub fn iht_solve_uncalibrated<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    config: &SolverConfig<T>,
) -> Result<SolverResult<T>> {
    run(ensemble, snapshots, config, false, |_| {})
}
