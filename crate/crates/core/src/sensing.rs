//! The multi-snapshot bilinear sensing model `y_l = diag(g) A_l x`.
//!
//! This module owns random instance generation, the least-squares loss and
//! the backprojection initializer. All draws are made in `f64` from streams
//! derived from a single seed (see [`crate::rng`]).

use std::borrow::Cow;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::linalg::{self, DenseMatrix};
use crate::rng::{derive_seed, rng_for_stream, rng_from_seed, Stream};
use crate::scalar::Real;

/// Problem sizes: signal length `n`, sensors `m`, snapshots `p`, sparsity `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub k: usize,
}

impl Dimensions {
    pub fn new(n: usize, m: usize, p: usize, k: usize) -> Result<Self> {
        let d = Self { n, m, p, k };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.p == 0 {
            return Err(Error::InvalidDimensions(format!(
                "n, m, p must be positive (n={}, m={}, p={})",
                self.n, self.m, self.p
            )));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::InvalidDimensions(format!(
                "sparsity k={} must lie in [1, n={}]",
                self.k, self.n
            )));
        }
        Ok(())
    }
}

/// A signal `x` (or iterate `ξ`) of length `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignalVector<T> {
    values: Vec<T>,
}

impl<T: Real> SignalVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![T::zero(); n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn nonzeros(&self) -> usize {
        linalg::count_nonzero(&self.values)
    }

    pub fn is_k_sparse(&self, k: usize) -> bool {
        self.nonzeros() <= k
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self::new(self.values.iter().map(|&v| v * alpha).collect())
    }
}

/// A gain vector `g` (or iterate `γ`) of length `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GainVector<T> {
    values: Vec<T>,
}

impl<T: Real> GainVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn ones(m: usize) -> Self {
        Self::new(vec![T::one(); m])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    pub fn is_positive(&self) -> bool {
        self.values.iter().all(|&v| v > T::zero())
    }

    /// Member of the scaled simplex: positive entries summing to `m`.
    pub fn is_canonical(&self) -> bool {
        let m = T::of_usize(self.len());
        self.is_positive() && (self.sum() - m).abs() <= geometry::sum_tolerance::<T>(self.len())
    }

    /// Member of `1 + (ρ·B∞ ∩ 1⊥)` up to the library's membership tolerances.
    pub fn is_feasible(&self, rho: f64) -> bool {
        geometry::GainFeasibleSet::new(self.len(), rho)
            .map(|set| set.contains(&self.values))
            .unwrap_or(false)
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self::new(self.values.iter().map(|&v| v * alpha).collect())
    }
}

#[derive(Debug, Clone)]
enum Storage<T> {
    Dense(Vec<DenseMatrix<T>>),
    /// Matrices are regenerated from the seed on every access.
    Seeded,
}

/// The `p` sensing matrices `A_l`, each `m × n` with i.i.d. `N(0, 1)` entries.
#[derive(Debug, Clone)]
pub struct SensingEnsemble<T> {
    m: usize,
    n: usize,
    p: usize,
    seed: Option<u64>,
    storage: Storage<T>,
}

/// Draw matrix `index` of the ensemble keyed by `seed`.
fn gaussian_matrix<T: Real>(m: usize, n: usize, seed: u64, index: usize) -> DenseMatrix<T> {
    let mut rng = rng_for_stream(seed, index as u64);
    let data = (0..m * n)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    DenseMatrix::from_row_major(m, n, data).expect("length m*n")
}

fn check_dims(dims: &Dimensions) -> Result<()> {
    if dims.n == 0 || dims.m == 0 || dims.p == 0 {
        return Err(Error::InvalidDimensions(format!(
            "n, m, p must be positive (n={}, m={}, p={})",
            dims.n, dims.m, dims.p
        )));
    }
    Ok(())
}

/// Draw `p` dense Gaussian matrices of shape `m × n`, deterministic in `seed`.
pub fn draw_ensemble<T: Real>(dims: &Dimensions, seed: u64) -> Result<SensingEnsemble<T>> {
    check_dims(dims)?;
    let matrices = (0..dims.p)
        .map(|l| gaussian_matrix(dims.m, dims.n, seed, l))
        .collect();
    Ok(SensingEnsemble {
        m: dims.m,
        n: dims.n,
        p: dims.p,
        seed: Some(seed),
        storage: Storage::Dense(matrices),
    })
}

impl<T: Real> SensingEnsemble<T> {
    /// Same matrices as [`draw_ensemble`] but nothing is stored: every access
    /// regenerates the requested matrix from its stream.
    pub fn seeded(dims: &Dimensions, seed: u64) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            m: dims.m,
            n: dims.n,
            p: dims.p,
            seed: Some(seed),
            storage: Storage::Seeded,
        })
    }

    /// Ensemble from explicit matrices; they must share one shape.
    pub fn from_matrices(matrices: Vec<DenseMatrix<T>>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidDimensions("empty ensemble".into()))?;
        let (m, n) = (first.rows(), first.cols());
        if m == 0 || n == 0 {
            return Err(Error::InvalidDimensions("zero-sized sensing matrix".into()));
        }
        if let Some(bad) = matrices.iter().position(|a| a.rows() != m || a.cols() != n) {
            return Err(Error::ShapeMismatch(format!(
                "matrix {bad} is {}x{}, expected {m}x{n}",
                matrices[bad].rows(),
                matrices[bad].cols()
            )));
        }
        Ok(Self {
            m,
            n,
            p: matrices.len(),
            seed: None,
            storage: Storage::Dense(matrices),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    /// Matrix `A_l`, borrowed when stored and regenerated otherwise.
    pub fn matrix(&self, l: usize) -> Cow<'_, DenseMatrix<T>> {
        assert!(l < self.p, "snapshot index {l} out of range");
        match &self.storage {
            Storage::Dense(ms) => Cow::Borrowed(&ms[l]),
            Storage::Seeded => Cow::Owned(gaussian_matrix(
                self.m,
                self.n,
                self.seed.expect("seeded storage has a seed"),
                l,
            )),
        }
    }

    /// A stored copy of this ensemble.
    pub fn to_dense(&self) -> Self {
        let matrices = (0..self.p).map(|l| self.matrix(l).into_owned()).collect();
        Self {
            storage: Storage::Dense(matrices),
            ..self.clone()
        }
    }

    pub(crate) fn check_signal(&self, x: &[T]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "signal has length {}, ensemble expects n={}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    pub(crate) fn check_gains(&self, g: &[T]) -> Result<()> {
        if g.len() != self.m {
            return Err(Error::ShapeMismatch(format!(
                "gains have length {}, ensemble expects m={}",
                g.len(),
                self.m
            )));
        }
        Ok(())
    }

    pub(crate) fn check_snapshots(&self, y: &SnapshotSet<T>) -> Result<()> {
        if y.len() != self.p {
            return Err(Error::ShapeMismatch(format!(
                "{} snapshots for an ensemble of p={}",
                y.len(),
                self.p
            )));
        }
        if let Some(bad) = y.iter().position(|s| s.len() != self.m) {
            return Err(Error::ShapeMismatch(format!(
                "snapshot {bad} has length {}, expected m={}",
                y.get(bad).len(),
                self.m
            )));
        }
        Ok(())
    }
}

/// The measurements `y_1, …, y_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SnapshotSet<T> {
    snapshots: Vec<Vec<T>>,
}

impl<T: Real> SnapshotSet<T> {
    pub fn new(snapshots: Vec<Vec<T>>) -> Self {
        Self { snapshots }
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn get(&self, l: usize) -> &[T] {
        &self.snapshots[l]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.snapshots.iter().map(Vec::as_slice)
    }

    pub fn into_inner(self) -> Vec<Vec<T>> {
        self.snapshots
    }
}

/// A `k`-sparse signal: uniform support, i.i.d. standard normal values.
pub fn draw_sparse_signal<T: Real>(n: usize, k: usize, seed: u64) -> Result<SignalVector<T>> {
    if n == 0 || k == 0 || k > n {
        return Err(Error::InvalidDimensions(format!(
            "sparsity k={k} must lie in [1, n={n}]"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut support = rand::seq::index::sample(&mut rng, n, k).into_vec();
    support.sort_unstable();
    let mut x = vec![T::zero(); n];
    for i in support {
        // Zero has probability zero under N(0,1); keep the support exact anyway.
        let mut v = 0.0;
        while v == 0.0 {
            v = rng.sample::<f64, _>(StandardNormal);
        }
        x[i] = T::of(v);
    }
    Ok(SignalVector::new(x))
}

/// Centered draws rejected this many times fall back to the Euclidean
/// projection of the last draw onto the feasible set.
pub const GAIN_REJECTION_ATTEMPTS: usize = 1000;

/// Gains in `G_ρ`: i.i.d. uniform offsets on `[−ρ, ρ]`, centered, rejected
/// when any centered offset leaves the box, then rescaled to sum to `m`.
pub fn draw_gains<T: Real>(m: usize, rho: f64, seed: u64) -> Result<GainVector<T>> {
    if m == 0 {
        return Err(Error::InvalidDimensions("m must be positive".into()));
    }
    geometry::check_rho(rho)?;
    if rho == 0.0 {
        return Ok(GainVector::ones(m));
    }
    let mut rng = rng_from_seed(seed);
    let mut offsets = vec![0.0f64; m];
    let mut accepted = false;
    for _ in 0..GAIN_REJECTION_ATTEMPTS {
        for e in offsets.iter_mut() {
            *e = rng.random_range(-rho..=rho);
        }
        let mean = offsets.iter().sum::<f64>() / m as f64;
        offsets.iter_mut().for_each(|e| *e -= mean);
        if offsets.iter().all(|e| e.abs() <= rho) {
            accepted = true;
            break;
        }
    }
    let mut g: Vec<T> = offsets.iter().map(|&e| T::of(1.0 + e)).collect();
    if !accepted {
        g = geometry::project_gain_box(&g, rho)?;
    }
    let scale = T::of_usize(m) / g.iter().copied().sum::<T>();
    g.iter_mut().for_each(|v| *v *= scale);
    Ok(GainVector::new(g))
}

fn check_model<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: Option<&SnapshotSet<T>>,
    x: &[T],
    g: &[T],
) -> Result<()> {
    ensemble.check_signal(x)?;
    ensemble.check_gains(g)?;
    if let Some(y) = snapshots {
        ensemble.check_snapshots(y)?;
    }
    Ok(())
}

/// `y_l = diag(g) A_l x` for every snapshot.
pub fn synthesize<T: Real>(
    ensemble: &SensingEnsemble<T>,
    x: &SignalVector<T>,
    g: &GainVector<T>,
) -> Result<SnapshotSet<T>> {
    check_model(ensemble, None, x.as_slice(), g.as_slice())?;
    let snapshots = (0..ensemble.p())
        .map(|l| {
            let mut y = ensemble.matrix(l).mul_vec(x.as_slice());
            y.iter_mut().zip(g.as_slice()).for_each(|(v, &gi)| *v *= gi);
            y
        })
        .collect();
    Ok(SnapshotSet::new(snapshots))
}

/// `f(ξ, γ) = 1/(2mp) Σ_l ‖diag(γ) A_l ξ − y_l‖²`.
pub fn loss<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
    xi: &SignalVector<T>,
    gamma: &GainVector<T>,
) -> Result<T> {
    check_model(ensemble, Some(snapshots), xi.as_slice(), gamma.as_slice())?;
    let mut total = T::zero();
    let mut u = vec![T::zero(); ensemble.m()];
    for (l, y) in snapshots.iter().enumerate() {
        ensemble.matrix(l).mul_vec_into(xi.as_slice(), &mut u);
        total += u
            .iter()
            .zip(gamma.as_slice())
            .zip(y)
            .map(|((&ui, &gi), &yi)| {
                let r = gi * ui - yi;
                r * r
            })
            .sum::<T>();
    }
    Ok(total / T::of_usize(2 * ensemble.m() * ensemble.p()))
}

/// `ξ_0 = 1/(mp) Σ_l A_lᵀ y_l`.
pub fn backproject_init<T: Real>(
    ensemble: &SensingEnsemble<T>,
    snapshots: &SnapshotSet<T>,
) -> Result<SignalVector<T>> {
    ensemble.check_snapshots(snapshots)?;
    let mut xi = vec![T::zero(); ensemble.n()];
    for (l, y) in snapshots.iter().enumerate() {
        ensemble.matrix(l).tr_mul_vec_acc(y, &mut xi);
    }
    let scale = T::one() / T::of_usize(ensemble.m() * ensemble.p());
    xi.iter_mut().for_each(|v| *v *= scale);
    Ok(SignalVector::new(xi))
}

/// Ground truth, sensing ensemble and measurements of one problem.
#[derive(Debug, Clone)]
pub struct ProblemInstance<T> {
    pub dims: Dimensions,
    pub rho: f64,
    /// Master seed, when the instance was generated rather than supplied.
    pub seed: Option<u64>,
    pub truth_signal: SignalVector<T>,
    pub truth_gains: GainVector<T>,
    pub ensemble: SensingEnsemble<T>,
    pub snapshots: SnapshotSet<T>,
}

/// Whether generated ensembles are stored or regenerated on access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnsembleStorage {
    #[default]
    Dense,
    Seeded,
}

impl<T: Real> ProblemInstance<T> {
    /// Random instance keyed by a single master seed.
    pub fn generate(dims: Dimensions, rho: f64, seed: u64) -> Result<Self> {
        Self::generate_with(dims, rho, seed, EnsembleStorage::Dense)
    }

    pub fn generate_with(
        dims: Dimensions,
        rho: f64,
        seed: u64,
        storage: EnsembleStorage,
    ) -> Result<Self> {
        dims.validate()?;
        let x = draw_sparse_signal(dims.n, dims.k, derive_seed(seed, Stream::Signal, 0))?;
        let g = draw_gains(dims.m, rho, derive_seed(seed, Stream::Gains, 0))?;
        let ensemble_seed = derive_seed(seed, Stream::Ensemble, 0);
        let ensemble = match storage {
            EnsembleStorage::Dense => draw_ensemble(&dims, ensemble_seed)?,
            EnsembleStorage::Seeded => SensingEnsemble::seeded(&dims, ensemble_seed)?,
        };
        let snapshots = synthesize(&ensemble, &x, &g)?;
        Ok(Self {
            dims,
            rho,
            seed: Some(seed),
            truth_signal: x,
            truth_gains: g,
            ensemble,
            snapshots,
        })
    }

    /// Instance from explicit parts; snapshots are synthesized from the truth.
    pub fn from_parts(
        k: usize,
        rho: f64,
        ensemble: SensingEnsemble<T>,
        x: SignalVector<T>,
        g: GainVector<T>,
    ) -> Result<Self> {
        geometry::check_rho(rho)?;
        let dims = Dimensions::new(ensemble.n(), ensemble.m(), ensemble.p(), k)?;
        let snapshots = synthesize(&ensemble, &x, &g)?;
        Ok(Self {
            dims,
            rho,
            seed: None,
            truth_signal: x,
            truth_gains: g,
            ensemble,
            snapshots,
        })
    }

    /// JSON-ready document. With `compact`, the ensemble is recorded by its
    /// seed only.
    pub fn to_document(&self, compact: bool) -> Result<InstanceDocument<T>> {
        let ensemble_seed = self.ensemble.seed();
        if compact && ensemble_seed.is_none() {
            return Err(Error::InvalidParameter(
                "compact serialization needs a seeded ensemble".into(),
            ));
        }
        let matrices = (!compact).then(|| {
            (0..self.ensemble.p())
                .map(|l| self.ensemble.matrix(l).as_slice().to_vec())
                .collect()
        });
        Ok(InstanceDocument {
            dims: self.dims,
            rho: self.rho,
            seed: self.seed,
            compact,
            ensemble_seed,
            truth_signal: Some(self.truth_signal.as_slice().to_vec()),
            truth_gains: Some(self.truth_gains.as_slice().to_vec()),
            matrices,
            snapshots: Some(self.snapshots.clone().into_inner()),
        })
    }

    /// Rebuild an instance. Missing vectors are regenerated from the master
    /// seed; a missing ensemble is regenerated from its own seed.
    pub fn from_document(doc: InstanceDocument<T>) -> Result<Self> {
        doc.dims.validate()?;
        geometry::check_rho(doc.rho)?;
        let dims = doc.dims;
        let (truth_signal, truth_gains) = match (doc.truth_signal, doc.truth_gains) {
            (Some(x), Some(g)) => (SignalVector::new(x), GainVector::new(g)),
            _ => {
                let seed = doc.seed.ok_or_else(|| {
                    Error::Format("document has neither ground truth nor a master seed".into())
                })?;
                let regenerated = Self::generate(dims, doc.rho, seed)?;
                (regenerated.truth_signal, regenerated.truth_gains)
            }
        };
        let ensemble = match doc.matrices {
            Some(ms) => {
                if ms.len() != dims.p {
                    return Err(Error::ShapeMismatch(format!(
                        "{} matrices for p={}",
                        ms.len(),
                        dims.p
                    )));
                }
                let ms = ms
                    .into_iter()
                    .map(|data| DenseMatrix::from_row_major(dims.m, dims.n, data))
                    .collect::<Result<Vec<_>>>()?;
                let mut e = SensingEnsemble::from_matrices(ms)?;
                e.seed = doc.ensemble_seed;
                e
            }
            None => {
                let seed = doc
                    .ensemble_seed
                    .or_else(|| doc.seed.map(|s| derive_seed(s, Stream::Ensemble, 0)))
                    .ok_or_else(|| {
                        Error::Format("document has neither matrices nor an ensemble seed".into())
                    })?;
                draw_ensemble(&dims, seed)?
            }
        };
        let snapshots = match doc.snapshots {
            Some(y) => {
                let y = SnapshotSet::new(y);
                ensemble.check_snapshots(&y)?;
                y
            }
            None => synthesize(&ensemble, &truth_signal, &truth_gains)?,
        };
        Ok(Self {
            dims,
            rho: doc.rho,
            seed: doc.seed,
            truth_signal,
            truth_gains,
            ensemble,
            snapshots,
        })
    }
}

/// Serialized form of a [`ProblemInstance`]; matrices are flat row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct InstanceDocument<T> {
    pub dims: Dimensions,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub compact: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_signal: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_gains: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Vec<Vec<T>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<Vec<Vec<T>>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(n: usize, m: usize, p: usize, k: usize) -> Dimensions {
        Dimensions::new(n, m, p, k).unwrap()
    }

    #[test]
    fn dimensions_reject_zero_and_oversparse() {
        assert!(Dimensions::new(0, 4, 1, 1).is_err());
        assert!(Dimensions::new(4, 0, 1, 1).is_err());
        assert!(Dimensions::new(4, 4, 0, 1).is_err());
        assert!(Dimensions::new(4, 4, 1, 0).is_err());
        assert!(Dimensions::new(4, 4, 1, 5).is_err());
    }

    #[test]
    fn ensemble_is_deterministic_and_shaped() {
        let d = dims(512, 160, 4, 32);
        let a = draw_ensemble::<f64>(&d, 11).unwrap();
        let b = draw_ensemble::<f64>(&d, 11).unwrap();
        assert_eq!(a.p(), 4);
        for l in 0..4 {
            assert_eq!(a.matrix(l).rows(), 160);
            assert_eq!(a.matrix(l).cols(), 512);
            assert_eq!(a.matrix(l).as_slice(), b.matrix(l).as_slice());
        }
        let c = draw_ensemble::<f64>(&d, 12).unwrap();
        assert_ne!(a.matrix(0).as_slice(), c.matrix(0).as_slice());
    }

    #[test]
    fn ensemble_rejects_zero_dims() {
        let d = Dimensions { n: 0, m: 3, p: 1, k: 1 };
        assert!(draw_ensemble::<f64>(&d, 0).is_err());
    }

    #[test]
    fn seeded_storage_matches_dense_bitwise() {
        let d = dims(20, 7, 3, 2);
        let dense = draw_ensemble::<f64>(&d, 99).unwrap();
        let seeded = SensingEnsemble::<f64>::seeded(&d, 99).unwrap();
        assert!(!seeded.is_dense());
        for l in 0..3 {
            assert_eq!(dense.matrix(l).as_slice(), seeded.matrix(l).as_slice());
        }
    }

    #[test]
    fn ensemble_entries_are_standard_normal() {
        let d = dims(1000, 1000, 1, 1);
        let e = draw_ensemble::<f64>(&d, 2024).unwrap();
        let a = e.matrix(0);
        let s = a.as_slice();
        let nf = s.len() as f64;
        let mean = s.iter().sum::<f64>() / nf;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn sparse_signal_has_exact_support() {
        let x = draw_sparse_signal::<f64>(512, 32, 5).unwrap();
        assert_eq!(x.nonzeros(), 32);
        let dense = draw_sparse_signal::<f64>(4, 4, 5).unwrap();
        assert_eq!(dense.nonzeros(), 4);
        assert!(draw_sparse_signal::<f64>(4, 5, 5).is_err());
    }

    #[test]
    fn sparse_support_is_uniform() {
        let (n, k, draws) = (8usize, 2usize, 10_000u64);
        let mut counts = vec![0usize; n];
        for s in 0..draws {
            let x = draw_sparse_signal::<f64>(n, k, derive_seed(1, Stream::Signal, s)).unwrap();
            for (c, v) in counts.iter_mut().zip(x.as_slice()) {
                if *v != 0.0 {
                    *c += 1;
                }
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() < 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn gains_with_zero_radius_are_ones() {
        let g = draw_gains::<f64>(10, 0.0, 3).unwrap();
        assert_eq!(g.as_slice(), &[1.0; 10]);
    }

    #[test]
    fn gains_lie_in_feasible_set() {
        let g = draw_gains::<f64>(128, 0.5, 17).unwrap();
        assert!(g.as_slice().iter().all(|&v| (0.5 - 1e-12..=1.5 + 1e-12).contains(&v)));
        assert!((g.sum() - 128.0).abs() < 1e-12);
        assert!(g.is_feasible(0.5));
        assert!(draw_gains::<f64>(4, 1.0, 0).is_err());
        assert!(draw_gains::<f64>(4, -0.1, 0).is_err());
    }

    #[test]
    fn large_gain_vectors_stay_feasible() {
        // Rejection almost always fails at this size; exercises the fallback.
        let g = draw_gains::<f64>(4096, 0.5, 8).unwrap();
        assert!(g.is_feasible(0.5));
        assert!((g.sum() - 4096.0).abs() < 1e-9);
    }

    #[test]
    fn gain_sampler_is_centered() {
        let draws = 10_000u64;
        let mean = (0..draws)
            .map(|s| draw_gains::<f64>(16, 0.5, derive_seed(9, Stream::Gains, s)).unwrap().as_slice()[0])
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn synthesize_small_examples() {
        let id = SensingEnsemble::from_matrices(vec![DenseMatrix::<f64>::identity(3)]).unwrap();
        let x = SignalVector::new(vec![1.0, -2.0, 0.5]);
        let y = synthesize(&id, &x, &GainVector::ones(3)).unwrap();
        assert_eq!(y.get(0), x.as_slice());

        let a = DenseMatrix::from_row_major(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let e = SensingEnsemble::from_matrices(vec![a]).unwrap();
        let y = synthesize(
            &e,
            &SignalVector::new(vec![1.0, 1.0]),
            &GainVector::new(vec![2.0, 0.5]),
        )
        .unwrap();
        assert_eq!(y.get(0), &[6.0, 3.5]);
    }

    #[test]
    fn synthesize_rejects_shape_mismatch() {
        let e = draw_ensemble::<f64>(&dims(5, 3, 2, 1), 0).unwrap();
        assert!(synthesize(&e, &SignalVector::zeros(4), &GainVector::ones(3)).is_err());
        assert!(synthesize(&e, &SignalVector::zeros(5), &GainVector::ones(2)).is_err());
    }

    #[test]
    fn loss_examples() {
        let inst = ProblemInstance::<f64>::generate(dims(24, 12, 3, 4), 0.5, 4).unwrap();
        let (e, y) = (&inst.ensemble, &inst.snapshots);
        let (x, g) = (&inst.truth_signal, &inst.truth_gains);
        assert!(loss(e, y, x, g).unwrap().abs() < 1e-26);
        let alpha = 2.0;
        assert!(loss(e, y, &x.scaled(alpha), &g.scaled(1.0 / alpha)).unwrap() < 1e-26);
        let expected = y.iter().map(linalg::norm_sq).sum::<f64>() / (2.0 * 12.0 * 3.0);
        let at_zero = loss(e, y, &SignalVector::zeros(24), &GainVector::new(vec![0.7; 12])).unwrap();
        assert!((at_zero - expected).abs() <= 1e-12 * expected);
        assert!(loss(e, y, &SignalVector::zeros(23), g).is_err());
    }

    #[test]
    fn scaling_equivalence() {
        let inst = ProblemInstance::<f64>::generate(dims(16, 8, 2, 3), 0.5, 1).unwrap();
        let alpha = 3.0;
        let y2 = synthesize(
            &inst.ensemble,
            &inst.truth_signal.scaled(alpha),
            &inst.truth_gains.scaled(1.0 / alpha),
        )
        .unwrap();
        for (a, b) in inst.snapshots.iter().zip(y2.iter()) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn backprojection_of_identity_recovers_signal() {
        let id = SensingEnsemble::from_matrices(vec![DenseMatrix::<f64>::identity(4)]).unwrap();
        let x = SignalVector::new(vec![1.0, 0.0, -3.0, 2.0]);
        let y = synthesize(&id, &x, &GainVector::ones(4)).unwrap();
        // ξ_0 = Aᵀy/(mp) = x/m for the identity.
        let xi = backproject_init(&id, &y).unwrap();
        for (a, b) in xi.as_slice().iter().zip(x.as_slice()) {
            assert_eq!(*a * 4.0, *b);
        }
        assert_eq!(backproject_init(&id, &y).unwrap(), xi);
    }

    #[test]
    fn backprojection_is_unbiased() {
        let d = dims(32, 64, 2, 4);
        let x = draw_sparse_signal::<f64>(32, 4, 100).unwrap();
        let g = draw_gains::<f64>(64, 0.5, 200).unwrap();
        let trials = 1000;
        let mut acc = vec![0.0; 32];
        for t in 0..trials {
            let e = draw_ensemble::<f64>(&d, derive_seed(300, Stream::Ensemble, t)).unwrap();
            let y = synthesize(&e, &x, &g).unwrap();
            linalg::axpy(1.0, backproject_init(&e, &y).unwrap().as_slice(), &mut acc);
        }
        acc.iter_mut().for_each(|v| *v /= trials as f64);
        let rel = linalg::dist(&acc, x.as_slice()) / linalg::norm(x.as_slice());
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn document_round_trip_regenerates_bitwise() {
        let inst = ProblemInstance::<f64>::generate(dims(16, 8, 3, 2), 0.5, 77).unwrap();
        for compact in [false, true] {
            let doc = inst.to_document(compact).unwrap();
            let json = serde_json::to_string(&doc).unwrap();
            let back: InstanceDocument<f64> = serde_json::from_str(&json).unwrap();
            let rebuilt = ProblemInstance::from_document(back).unwrap();
            assert_eq!(rebuilt.snapshots, inst.snapshots);
            assert_eq!(rebuilt.truth_signal, inst.truth_signal);
            for l in 0..3 {
                assert_eq!(
                    rebuilt.ensemble.matrix(l).as_slice(),
                    inst.ensemble.matrix(l).as_slice()
                );
            }
        }
        let again = ProblemInstance::<f64>::generate(inst.dims, 0.5, 77).unwrap();
        assert_eq!(again.snapshots, inst.snapshots);
    }

    #[test]
    fn seed_only_document_regenerates() {
        let inst = ProblemInstance::<f64>::generate(dims(10, 6, 2, 2), 0.3, 5).unwrap();
        let doc = InstanceDocument::<f64> {
            dims: inst.dims,
            rho: 0.3,
            seed: Some(5),
            compact: true,
            ensemble_seed: None,
            truth_signal: None,
            truth_gains: None,
            matrices: None,
            snapshots: None,
        };
        let rebuilt = ProblemInstance::from_document(doc).unwrap();
        assert_eq!(rebuilt.snapshots, inst.snapshots);
    }

    #[test]
    fn compact_needs_seeded_ensemble() {
        let id = SensingEnsemble::from_matrices(vec![DenseMatrix::<f64>::identity(2)]).unwrap();
        let inst = ProblemInstance::from_parts(
            1,
            0.0,
            id,
            SignalVector::new(vec![1.0, 0.0]),
            GainVector::ones(2),
        )
        .unwrap();
        assert!(inst.to_document(true).is_err());
        assert!(inst.to_document(false).is_ok());
    }
}
