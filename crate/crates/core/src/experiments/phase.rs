//! Empirical phase transition of BC-IHT over an `(n, k, m, p)` grid.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::rng::{derive_seed, Stream};
use crate::scalar::Real;
use crate::sensing::{Dimensions, EnsembleStorage, ProblemInstance};
use crate::solver::{bc_iht_solve, evaluate, SolverConfig, DEFAULT_MAX_ITERS, DEFAULT_STOP_TOL};

pub const PHASE_CSV_HEADER: &str = "n,k,m,p,trials,successes,probability,mean_iters,mean_seconds";

/// Instances larger than this regenerate their matrices instead of storing them.
const DENSE_INSTANCE_BYTES: usize = 256 << 20;

fn default_zeta_db() -> f64 {
    -60.0
}

fn default_stop_tol() -> f64 {
    DEFAULT_STOP_TOL
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

/// Sweep definition. `m = ⌈2^e·k⌉` for each `e` in `m_over_k_exponents` and
/// `p = ⌈2^e⌉` for each `e` in `p_exponents`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGridSpec {
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub m_over_k_exponents: Vec<f64>,
    pub p_exponents: Vec<f64>,
    pub rho: f64,
    pub trials: usize,
    #[serde(default = "default_zeta_db")]
    pub zeta_db: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Measure wall time per trial. Off by default, which writes zero in
    /// `mean_seconds` and keeps the output byte-reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

/// `⌈v⌉`, treating values within rounding of an integer as that integer so
/// that `2^{log2 6}` maps to 6.
fn snapped_ceil(v: f64) -> usize {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        v.ceil() as usize
    }
}

/// `{e_0, e_0 + step, …, e_1}`.
pub fn exponent_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| start + i as f64 * step).collect()
}

impl PhaseGridSpec {
    /// Desk-scale sweep: `n = 256`, `k = 16`, `m/k, p ∈ {2, 4, 8}`.
    pub fn desk_scale() -> Self {
        Self {
            n_values: vec![256],
            k_values: vec![16],
            m_over_k_exponents: vec![1.0, 2.0, 3.0],
            p_exponents: vec![1.0, 2.0, 3.0],
            rho: 0.5,
            trials: 24,
            zeta_db: default_zeta_db(),
            master_seed: 0,
            stop_tol: DEFAULT_STOP_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            record_timing: false,
        }
    }

    /// The full published sweep: hours of compute.
    pub fn full_scale() -> Self {
        let exps = exponent_range(1.0, 5.0, 0.25);
        Self {
            n_values: vec![512, 1024],
            k_values: vec![32, 64, 128],
            m_over_k_exponents: exps.clone(),
            p_exponents: exps,
            trials: 144,
            ..Self::desk_scale()
        }
    }

    pub fn zeta(&self) -> f64 {
        10f64.powf(self.zeta_db / 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty()
            || self.k_values.is_empty()
            || self.m_over_k_exponents.is_empty()
            || self.p_exponents.is_empty()
        {
            return Err(Error::InvalidParameter("grid lists must be non-empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        geometry::check_rho(self.rho)?;
        if self.stop_tol.is_nan() || self.stop_tol <= 0.0 || self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "stop_tol must be positive and max_iters at least 1".into(),
            ));
        }
        if !self.zeta_db.is_finite() {
            return Err(Error::InvalidParameter("zeta_db must be finite".into()));
        }
        if let Some(e) = self
            .m_over_k_exponents
            .iter()
            .chain(&self.p_exponents)
            .find(|e| !e.is_finite() || **e > 40.0)
        {
            return Err(Error::InvalidParameter(format!("grid exponent {e} out of range")));
        }
        for &n in &self.n_values {
            for &k in &self.k_values {
                if n == 0 || k == 0 || k > n {
                    return Err(Error::InvalidDimensions(format!(
                        "infeasible cell with k={k} and n={n}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Distinct cells sorted by `(n, k, m, p)`.
    pub fn cells(&self) -> Result<Vec<Dimensions>> {
        self.validate()?;
        let mut cells = Vec::new();
        for &n in &self.n_values {
            for &k in &self.k_values {
                for &em in &self.m_over_k_exponents {
                    let m = snapped_ceil(2f64.powf(em) * k as f64).max(1);
                    for &ep in &self.p_exponents {
                        let p = snapped_ceil(2f64.powf(ep)).max(1);
                        cells.push(Dimensions::new(n, m, p, k)?);
                    }
                }
            }
        }
        cells.sort_by_key(|d| (d.n, d.k, d.m, d.p));
        cells.dedup();
        Ok(cells)
    }

    /// Seed of trial `trial` in `cell`; depends on nothing else.
    pub fn trial_seed(&self, cell: &Dimensions, trial: usize) -> u64 {
        let mut s = self.master_seed;
        for v in [cell.n, cell.k, cell.m, cell.p] {
            s = derive_seed(s, Stream::Cell, v as u64);
        }
        derive_seed(s, Stream::Trial, trial as u64)
    }
}

/// Aggregated outcome of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub trials: usize,
    pub successes: usize,
    pub probability: f64,
    pub mean_iters: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGridResult {
    pub cells: Vec<PhaseCell>,
}

impl PhaseGridResult {
    pub fn cell(&self, n: usize, k: usize, m: usize, p: usize) -> Option<&PhaseCell> {
        self.cells
            .iter()
            .find(|c| (c.n, c.k, c.m, c.p) == (n, k, m, p))
    }
}

struct TrialOutcome {
    success: bool,
    iterations: usize,
    seconds: f64,
}

fn run_trial<T: Real>(spec: &PhaseGridSpec, dims: &Dimensions, trial: usize) -> Result<TrialOutcome> {
    let start = Instant::now();
    let bytes = dims.m * dims.n * dims.p * std::mem::size_of::<T>();
    let storage = if bytes <= DENSE_INSTANCE_BYTES {
        EnsembleStorage::Dense
    } else {
        EnsembleStorage::Seeded
    };
    let inst = ProblemInstance::<T>::generate_with(*dims, spec.rho, spec.trial_seed(dims, trial), storage)?;
    let mut config = SolverConfig::new(dims.k, spec.rho);
    config.stop_tol = spec.stop_tol;
    config.max_iters = spec.max_iters;
    let result = bc_iht_solve(&inst.ensemble, &inst.snapshots, &config)?;
    let report = evaluate(&inst.truth_signal, &inst.truth_gains, &result)?;
    Ok(TrialOutcome {
        success: report.rel_err_x.max(report.rel_err_g) < spec.zeta(),
        iterations: result.iterations,
        seconds: if spec.record_timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    })
}

fn run_all<T: Real>(spec: &PhaseGridSpec, cells: &[Dimensions]) -> Result<Vec<TrialOutcome>> {
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.trials).map(move |t| (c, t)))
        .collect();
    jobs.par_iter()
        .map(|&(c, t)| run_trial::<T>(spec, &cells[c], t))
        .collect()
}

/// Solve `trials` random instances per cell and tabulate success rates.
/// Results do not depend on `threads` (`None` uses the global pool).
pub fn run_phase_grid<T: Real>(spec: &PhaseGridSpec, threads: Option<usize>) -> Result<PhaseGridResult> {
    let cells = spec.cells()?;
    let outcomes = super::with_threads(threads, || run_all::<T>(spec, &cells))??;
    let cells = cells
        .iter()
        .zip(outcomes.chunks(spec.trials))
        .map(|(d, chunk)| {
            let successes = chunk.iter().filter(|o| o.success).count();
            let trials = chunk.len();
            PhaseCell {
                n: d.n,
                k: d.k,
                m: d.m,
                p: d.p,
                trials,
                successes,
                probability: successes as f64 / trials as f64,
                mean_iters: chunk.iter().map(|o| o.iterations as f64).sum::<f64>() / trials as f64,
                mean_seconds: chunk.iter().map(|o| o.seconds).sum::<f64>() / trials as f64,
            }
        })
        .collect();
    Ok(PhaseGridResult { cells })
}

/// CSV text with the fixed header and rows sorted by `(n, k, m, p)`.
pub fn emit_phase_csv(result: &PhaseGridResult) -> Result<String> {
    let mut rows = result.cells.clone();
    rows.sort_by_key(|c| (c.n, c.k, c.m, c.p));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let header: Vec<&str> = PHASE_CSV_HEADER.split(',').collect();
    let csv_err = |e: csv::Error| Error::Internal(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for row in &rows {
        w.serialize(row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Internal(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(format!("csv: {e}")))
}

pub fn write_phase_csv(result: &PhaseGridResult, path: impl AsRef<Path>) -> Result<()> {
    let text = emit_phase_csv(result)?;
    std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
}

pub fn parse_phase_csv(text: &str) -> Result<PhaseGridResult> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| Error::Format(format!("csv header: {e}")))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != PHASE_CSV_HEADER {
        return Err(Error::Format(format!("unexpected csv header {header:?}")));
    }
    let cells = r
        .deserialize()
        .collect::<std::result::Result<Vec<PhaseCell>, _>>()
        .map_err(|e| Error::Format(format!("csv row: {e}")))?;
    Ok(PhaseGridResult { cells })
}

pub fn read_phase_csv(path: impl AsRef<Path>) -> Result<PhaseGridResult> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path, e))?;
    parse_phase_csv(&text)
}

/// Points `(m, p)` on `m p = C (k + m)`, i.e. `p = C (1 + k/m)`.
pub fn reference_curve(k: usize, m_values: &[f64], c: f64) -> Result<Vec<(f64, f64)>> {
    if c.is_nan() || c <= 0.0 || k == 0 {
        return Err(Error::InvalidParameter(format!(
            "reference curve needs C > 0 and k > 0 (C={c}, k={k})"
        )));
    }
    m_values
        .iter()
        .map(|&m| {
            if m > 0.0 {
                Ok((m, c * (1.0 + k as f64 / m)))
            } else {
                Err(Error::InvalidParameter(format!("m={m} must be positive")))
            }
        })
        .collect()
}

/// Least-squares fit of `C` to the 0.5-probability contour of the `(n, k)`
/// slice, in `log2 p`. For each `m`, the contour is located by linear
/// interpolation in `log2 p` between the first pair of cells that straddles
/// 0.5. Returns `None` when no column crosses.
pub fn fit_reference_constant(result: &PhaseGridResult, n: usize, k: usize) -> Option<f64> {
    let mut slice: Vec<&PhaseCell> = result.cells.iter().filter(|c| c.n == n && c.k == k).collect();
    slice.sort_by_key(|c| (c.m, c.p));
    let mut offsets = Vec::new();
    for column in slice.chunk_by(|a, b| a.m == b.m) {
        let crossing = column.windows(2).find(|w| w[0].probability < 0.5 && w[1].probability >= 0.5);
        if let Some(w) = crossing {
            let (lp0, lp1) = ((w[0].p as f64).log2(), (w[1].p as f64).log2());
            let t = (0.5 - w[0].probability) / (w[1].probability - w[0].probability);
            let lp = lp0 + t * (lp1 - lp0);
            offsets.push(lp - (1.0 + k as f64 / column[0].m as f64).log2());
        }
    }
    if offsets.is_empty() {
        None
    } else {
        Some(2f64.powf(offsets.iter().sum::<f64>() / offsets.len() as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(m: usize, p: usize, probability: f64) -> PhaseCell {
        PhaseCell {
            n: 64,
            k: 8,
            m,
            p,
            trials: 10,
            successes: (probability * 10.0).round() as usize,
            probability,
            mean_iters: 12.5,
            mean_seconds: 0.0,
        }
    }

    #[test]
    fn grid_construction_matches_ceilings() {
        let spec = PhaseGridSpec {
            n_values: vec![512],
            k_values: vec![32],
            m_over_k_exponents: vec![1.0, 1.25],
            p_exponents: vec![1.0, 1.25, 6f64.log2()],
            ..PhaseGridSpec::desk_scale()
        };
        let cells = spec.cells().unwrap();
        let mp: Vec<(usize, usize)> = cells.iter().map(|d| (d.m, d.p)).collect();
        // 2^1.25 = 2.378…, 2^1.25·32 = 76.1…
        assert_eq!(mp, vec![(64, 2), (64, 3), (64, 6), (77, 2), (77, 3), (77, 6)]);
        assert_eq!(PhaseGridSpec::full_scale().p_exponents.len(), 17);
    }

    #[test]
    fn validation() {
        let mut spec = PhaseGridSpec::desk_scale();
        spec.k_values = vec![300];
        assert!(matches!(spec.cells(), Err(Error::InvalidDimensions(_))));
        let mut spec = PhaseGridSpec::desk_scale();
        spec.trials = 0;
        assert!(spec.validate().is_err());
        let mut spec = PhaseGridSpec::desk_scale();
        spec.p_exponents.clear();
        assert!(spec.validate().is_err());
        assert!((PhaseGridSpec::desk_scale().zeta() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn trial_seeds_are_isolated() {
        let spec = PhaseGridSpec::desk_scale();
        let d = Dimensions::new(256, 32, 2, 16).unwrap();
        let more = PhaseGridSpec { trials: 100, ..spec.clone() };
        assert_eq!(spec.trial_seed(&d, 3), more.trial_seed(&d, 3));
        assert_ne!(spec.trial_seed(&d, 3), spec.trial_seed(&d, 4));
    }

    #[test]
    fn single_trial_cell() {
        let spec = PhaseGridSpec {
            n_values: vec![128],
            k_values: vec![8],
            m_over_k_exponents: vec![3.0],
            p_exponents: vec![6f64.log2()],
            trials: 1,
            ..PhaseGridSpec::desk_scale()
        };
        let r = run_phase_grid::<f64>(&spec, Some(1)).unwrap();
        assert_eq!(r.cells.len(), 1);
        let c = &r.cells[0];
        assert_eq!((c.n, c.k, c.m, c.p), (128, 8, 64, 6));
        assert!(c.probability == 0.0 || c.probability == 1.0);
    }

    #[test]
    fn csv_shapes() {
        let empty = emit_phase_csv(&PhaseGridResult { cells: vec![] }).unwrap();
        assert_eq!(empty, format!("{PHASE_CSV_HEADER}\n"));

        let r = PhaseGridResult {
            cells: vec![cell(64, 4, 1.0), cell(32, 2, 0.1), cell(64, 2, 0.5)],
        };
        let text = emit_phase_csv(&r).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], PHASE_CSV_HEADER);
        assert!(lines[1].starts_with("64,8,32,2,"));
        assert!(lines[3].starts_with("64,8,64,4,"));
    }

    #[test]
    fn csv_round_trip() {
        let one = PhaseGridResult {
            cells: vec![PhaseCell {
                probability: 1.0 / 3.0,
                mean_iters: 123.456789012345,
                mean_seconds: 1e-7,
                ..cell(64, 4, 0.3)
            }],
        };
        let back = parse_phase_csv(&emit_phase_csv(&one).unwrap()).unwrap();
        assert_eq!(back, one);
        assert!(parse_phase_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn reference_curve_algebra() {
        let pts = reference_curve(32, &[32.0, 64.0, 1e12], 2.0).unwrap();
        assert!((pts[0].1 - 4.0).abs() < 1e-12);
        assert!((pts[1].1 - 3.0).abs() < 1e-12);
        assert!((pts[2].1 - 2.0).abs() < 1e-9);
        assert!(reference_curve(32, &[64.0], 0.0).is_err());
        assert!(reference_curve(32, &[-1.0], 1.0).is_err());
    }

    #[test]
    fn fitted_constant_recovers_synthetic_contour() {
        // Contour exactly on p = 2 (1 + k/m) with k = 8: p = 4 at m = 8, 3 at m = 16.
        let cells = vec![
            cell(8, 2, 0.0),
            cell(8, 8, 1.0),
            cell(16, 2, 0.0),
            cell(16, 4, 1.0),
        ];
        // log2 midpoint interpolation: m=8 crossing at log2 p = 2 → p = 4;
        // m=16 crossing at log2 p = 1.5 → p = 2√2; C = 2^{mean offsets}.
        let c = fit_reference_constant(&PhaseGridResult { cells }, 64, 8).unwrap();
        let off1 = 2.0 - 2f64.log2();
        let off2 = 1.5 - 1.5f64.log2();
        assert!((c - 2f64.powf((off1 + off2) / 2.0)).abs() < 1e-12);
        assert!(fit_reference_constant(&PhaseGridResult { cells: vec![] }, 64, 8).is_none());
    }
}
