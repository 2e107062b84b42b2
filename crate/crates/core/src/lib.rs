//! Blind calibration of compressed-sensing systems with unknown sensor gains.
//!
//! Signals are observed through `p` snapshots `y_l = diag(g) A_l x` with
//! Gaussian sensing matrices `A_l` and unknown positive gains `g`.
//! [`solver::bc_iht_solve`] recovers the sparse signal and the gains
//! jointly by projected gradient descent with hard thresholding.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which the experiment harness uses.

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod rng;
pub mod scalar;
pub mod sensing;
pub mod solver;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::Real;
pub use sensing::Dimensions;

pub type ProblemInstance = sensing::ProblemInstance<f64>;
pub type ProblemInstanceF32 = sensing::ProblemInstance<f32>;
pub type SensingEnsemble = sensing::SensingEnsemble<f64>;
pub type SnapshotSet = sensing::SnapshotSet<f64>;
pub type SignalVector = sensing::SignalVector<f64>;
pub type GainVector = sensing::GainVector<f64>;
pub type SolverConfig = solver::SolverConfig<f64>;
pub type SolverConfigF32 = solver::SolverConfig<f32>;
pub type SolverResult = solver::SolverResult<f64>;
pub type WaveletBasis = wavelet::WaveletBasis<f64>;
pub type InstanceDocument = sensing::InstanceDocument<f64>;
