//! Experiment harnesses: Monte-Carlo phase-transition sweeps, the
//! compressive-imaging demo, and their file formats.

pub mod demo;
pub mod phase;
pub mod pnm;

pub use demo::{run_imaging_demo, DemoConfig, DemoReport};
pub use phase::{
    emit_phase_csv, fit_reference_constant, parse_phase_csv, read_phase_csv, reference_curve,
    run_phase_grid, write_phase_csv, PhaseCell, PhaseGridResult, PhaseGridSpec, PHASE_CSV_HEADER,
};

use crate::error::{Error, Result};

/// Run `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        Some(t) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
            .install(f)),
        None => Ok(f()),
    }
}
