//! Blind calibration for compressive imaging.
//!
//! An image is made exactly `k`-sparse in the Daubechies-4 basis, observed
//! through `p` Gaussian snapshots with unknown sensor gains, and recovered
//! per colour channel both by BC-IHT and by IHT that ignores the gains.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::pnm::{self, Image};
use crate::rng::{derive_seed, Stream};
use crate::sensing::{draw_ensemble, draw_gains, synthesize, GainVector, SensingEnsemble, SignalVector};
use crate::solver::{
    bc_iht_solve, evaluate, iht_solve_uncalibrated, EvalReport, SolverConfig, Termination,
    DEFAULT_MAX_ITERS, DEFAULT_STOP_TOL,
};
use crate::wavelet::WaveletBasis;

pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    /// PGM/PPM input; a built-in synthetic image when absent.
    pub image: Option<PathBuf>,
    pub side: usize,
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub rho: f64,
    pub seed: u64,
    pub grayscale: bool,
    pub stop_tol: f64,
    pub max_iters: usize,
    /// Wavelet depth; `log2(side) − 1` when absent.
    pub levels: Option<usize>,
    /// Dense matrices are stored only while `8·m·n·p` fits in this budget.
    pub memory_budget_bytes: u64,
    /// Regenerate matrices from their seed when over budget instead of failing.
    pub allow_seeded: bool,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            image: None,
            side: 64,
            k: 300,
            m: 1764,
            p: 5,
            rho: 0.5,
            seed: 0,
            grayscale: true,
            stop_tol: DEFAULT_STOP_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            levels: None,
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET,
            allow_seeded: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: usize,
    pub iterations: usize,
    pub termination: Termination,
    #[serde(flatten)]
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub side: usize,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub rho: f64,
    pub seed: u64,
    pub channels: usize,
    pub dense_storage: bool,
    pub bc_iht: Vec<ChannelReport>,
    pub iht: Vec<ChannelReport>,
    /// Worst channel RSNRs.
    pub bc_iht_rsnr_x_db: f64,
    pub bc_iht_rsnr_g_db: f64,
    pub iht_rsnr_x_db: f64,
}

/// Ground truth and estimates, enough to recompute every reported metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoEstimates {
    pub truth_gains: Vec<f64>,
    pub channels: Vec<ChannelEstimates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimates {
    pub truth: Vec<f64>,
    pub bc_iht_signal: Vec<f64>,
    pub bc_iht_gains: Vec<f64>,
    pub iht_signal: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub report: DemoReport,
    pub estimates: DemoEstimates,
    /// The `k`-sparse ground-truth image.
    pub truth_image: Image,
}

/// Piecewise-smooth test card: a shaded background with a disc, a bar and
/// a ramp, slightly different per channel.
pub fn synthetic_image(side: usize) -> Image {
    let mut planes: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(side * side)).collect();
    for r in 0..side {
        for c in 0..side {
            let (u, v) = ((c as f64 + 0.5) / side as f64, (r as f64 + 0.5) / side as f64);
            let disc = ((u - 0.35).powi(2) + (v - 0.4).powi(2)).sqrt() < 0.22;
            let bar = (0.55..0.85).contains(&u) && (0.2..0.5).contains(&v);
            let ramp = v > 0.7 && u > 0.1 && u < 0.9;
            let base = 0.25 + 0.35 * u * v;
            for (ch, plane) in planes.iter_mut().enumerate() {
                let mut val = base + 0.05 * ch as f64 * (1.0 - u);
                if disc {
                    val += 0.35 - 0.1 * ch as f64;
                }
                if bar {
                    val = 0.8 - 0.15 * ch as f64;
                }
                if ramp {
                    val = 0.1 + 0.6 * u;
                }
                plane.push(val);
            }
        }
    }
    Image::from_planes(side, side, &planes).expect("consistent planes")
}

fn worst(reports: &[ChannelReport], f: impl Fn(&EvalReport) -> f64) -> f64 {
    reports.iter().map(|r| f(&r.eval)).fold(f64::INFINITY, f64::min)
}

pub fn run_imaging_demo(config: &DemoConfig) -> Result<DemoOutcome> {
    let basis = match config.levels {
        Some(l) => WaveletBasis::<f64>::new(config.side, l)?,
        None => WaveletBasis::<f64>::with_default_levels(config.side)?,
    };
    let n = basis.len();
    if config.k == 0 || config.k > n || config.m == 0 || config.p == 0 {
        return Err(Error::InvalidDimensions(format!(
            "need 1 <= k <= n={n}, m >= 1, p >= 1 (k={}, m={}, p={})",
            config.k, config.m, config.p
        )));
    }

    let source = match &config.image {
        Some(path) => pnm::read(path)?,
        None => synthetic_image(config.side),
    };
    let mut image = source.square(config.side);
    if config.grayscale {
        image = image.to_grayscale();
    }

    let truths = (0..image.channels)
        .map(|c| Ok(basis.sparsify_top_k(&image.plane(c), config.k)?.0))
        .collect::<Result<Vec<_>>>()?;
    let truth_image = Image::from_planes(config.side, config.side, &truths)?;

    let dims = crate::Dimensions::new(n, config.m, config.p, config.k)?;
    let gains = draw_gains::<f64>(config.m, config.rho, derive_seed(config.seed, Stream::Gains, 0))?;
    let ensemble_seed = derive_seed(config.seed, Stream::Ensemble, 0);
    let bytes = (config.m as u64) * (n as u64) * (config.p as u64) * 8;
    let ensemble = if bytes <= config.memory_budget_bytes {
        draw_ensemble::<f64>(&dims, ensemble_seed)?
    } else if config.allow_seeded {
        SensingEnsemble::seeded(&dims, ensemble_seed)?
    } else {
        return Err(Error::InvalidParameter(format!(
            "dense ensemble needs {bytes} bytes, budget is {}",
            config.memory_budget_bytes
        )));
    };

    let mut solver = SolverConfig::new(config.k, config.rho).with_basis(basis);
    solver.stop_tol = config.stop_tol;
    solver.max_iters = config.max_iters;

    let per_channel = truths
        .par_iter()
        .enumerate()
        .map(|(c, truth)| {
            let x = SignalVector::new(truth.clone());
            let y = synthesize(&ensemble, &x, &gains)?;
            let bc = bc_iht_solve(&ensemble, &y, &solver)?;
            let iht = iht_solve_uncalibrated(&ensemble, &y, &solver)?;
            let bc_eval = evaluate(&x, &gains, &bc)?;
            let iht_eval = evaluate(&x, &gains, &iht)?;
            Ok((
                ChannelReport {
                    channel: c,
                    iterations: bc.iterations,
                    termination: bc.termination,
                    eval: bc_eval,
                },
                ChannelReport {
                    channel: c,
                    iterations: iht.iterations,
                    termination: iht.termination,
                    eval: iht_eval,
                },
                ChannelEstimates {
                    truth: truth.clone(),
                    bc_iht_signal: bc.x_hat.into_vec(),
                    bc_iht_gains: bc.g_hat.into_vec(),
                    iht_signal: iht.x_hat.into_vec(),
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut bc_reports = Vec::new();
    let mut iht_reports = Vec::new();
    let mut channels = Vec::new();
    for (b, i, e) in per_channel {
        bc_reports.push(b);
        iht_reports.push(i);
        channels.push(e);
    }
    let report = DemoReport {
        side: config.side,
        n,
        k: config.k,
        m: config.m,
        p: config.p,
        rho: config.rho,
        seed: config.seed,
        channels: image.channels,
        dense_storage: ensemble.is_dense(),
        bc_iht_rsnr_x_db: worst(&bc_reports, |e| e.rsnr_x_db),
        bc_iht_rsnr_g_db: worst(&bc_reports, |e| e.rsnr_g_db),
        iht_rsnr_x_db: worst(&iht_reports, |e| e.rsnr_x_db),
        bc_iht: bc_reports,
        iht: iht_reports,
    };
    Ok(DemoOutcome {
        report,
        estimates: DemoEstimates {
            truth_gains: gains.into_vec(),
            channels,
        },
        truth_image,
    })
}

/// Recompute the worst-channel RSNRs `(bc_x, bc_g, iht_x)` from estimates.
pub fn rsnr_from_estimates(estimates: &DemoEstimates) -> Result<(f64, f64, f64)> {
    let g = GainVector::new(estimates.truth_gains.clone());
    let ones = GainVector::ones(g.len());
    let (mut bx, mut bg, mut ix) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for ch in &estimates.channels {
        let x = SignalVector::new(ch.truth.clone());
        let bc = crate::solver::evaluate_estimates(
            &x,
            &g,
            &SignalVector::new(ch.bc_iht_signal.clone()),
            &GainVector::new(ch.bc_iht_gains.clone()),
        )?;
        let iht = crate::solver::evaluate_estimates(&x, &g, &SignalVector::new(ch.iht_signal.clone()), &ones)?;
        bx = bx.min(bc.rsnr_x_db);
        bg = bg.min(bc.rsnr_g_db);
        ix = ix.min(iht.rsnr_x_db);
    }
    Ok((bx, bg, ix))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("json encoding: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Gains as a square image when `m` is a perfect square, mapped from
/// `[1 − ρ, 1 + ρ]` to `[0, 1]`.
fn gains_image(g: &[f64], rho: f64) -> Option<Image> {
    let side = (g.len() as f64).sqrt().round() as usize;
    if side * side != g.len() {
        return None;
    }
    let span = if rho > 0.0 { 2.0 * rho } else { 1.0 };
    let data = g.iter().map(|v| (v - (1.0 - span / 2.0)) / span).collect();
    Image::new(side, side, 1, data).ok()
}

/// Write images, `report.json` and `estimates.json` into `dir`.
pub fn write_outputs(outcome: &DemoOutcome, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = if outcome.truth_image.channels == 1 { "pgm" } else { "ppm" };
    let side = outcome.report.side;
    let planes = |f: fn(&ChannelEstimates) -> &Vec<f64>| {
        outcome.estimates.channels.iter().map(|c| f(c).clone()).collect::<Vec<_>>()
    };
    pnm::write(&outcome.truth_image, dir.join(format!("truth.{ext}")))?;
    pnm::write(
        &Image::from_planes(side, side, &planes(|c| &c.bc_iht_signal))?,
        dir.join(format!("bc_iht.{ext}")),
    )?;
    pnm::write(
        &Image::from_planes(side, side, &planes(|c| &c.iht_signal))?,
        dir.join(format!("iht.{ext}")),
    )?;
    let rho = outcome.report.rho;
    if let Some(img) = gains_image(&outcome.estimates.truth_gains, rho) {
        pnm::write(&img, dir.join("gains_true.pgm"))?;
    }
    if let Some(first) = outcome.estimates.channels.first() {
        if let Some(img) = gains_image(&first.bc_iht_gains, rho) {
            pnm::write(&img, dir.join("gains_bc_iht.pgm"))?;
        }
    }
    write_json(&dir.join("report.json"), &outcome.report)?;
    write_json(&dir.join("estimates.json"), &outcome.estimates)
}
