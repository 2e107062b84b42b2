use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use bciht::experiments::demo::{run_imaging_demo, write_outputs, DemoConfig, DEFAULT_MEMORY_BUDGET};
use bciht::experiments::{emit_phase_csv, fit_reference_constant, run_phase_grid, with_threads, PhaseGridSpec};
use bciht::sensing::EnsembleStorage;
use bciht::solver::{self, evaluate, DEFAULT_MAX_ITERS, DEFAULT_STOP_TOL};
use bciht::{Dimensions, Error, InstanceDocument, ProblemInstance, Result, SolverConfig, WaveletBasis};

/// Blind calibration of compressed-sensing gains by iterative hard thresholding.
#[derive(Parser)]
#[command(name = "bciht", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random problem instance and write it as JSON.
    Gen(GenArgs),
    /// Solve a JSON problem instance.
    Solve(SolveArgs),
    /// Run a phase-transition sweep and write the CSV table.
    Phase(PhaseArgs),
    /// Run the compressive-imaging demo.
    Demo(DemoArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Store the ensemble seed instead of the matrices.
    #[arg(long)]
    compact: bool,
    /// Output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    /// Sparsity level (defaults to the instance's k).
    #[arg(long)]
    k: Option<usize>,
    /// Gain-deviation bound (defaults to the instance's rho).
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_STOP_TOL)]
    stop_tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Project gain iterates onto the feasible set.
    #[arg(long)]
    project_gains: bool,
    /// Keep the gains fixed at one (plain IHT).
    #[arg(long)]
    uncalibrated: bool,
    /// Threshold in a Daubechies-4 basis; the signal must be a square image.
    #[arg(long)]
    wavelet: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PhaseArgs {
    /// JSON grid specification (the desk-scale grid if omitted).
    config: Option<PathBuf>,
    /// Override the grid's master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Record wall time per trial (output is then not reproducible).
    #[arg(long)]
    timing: bool,
    /// Solve in single precision.
    #[arg(long)]
    f32: bool,
    /// Output CSV (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    /// PPM or PGM source image (a synthetic test card if omitted).
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    side: usize,
    #[arg(long, default_value_t = 300)]
    k: usize,
    #[arg(long, default_value_t = 1764)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Recover all colour channels instead of the luma.
    #[arg(long)]
    color: bool,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_STOP_TOL)]
    stop_tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Largest dense ensemble, in MiB, before matrices are regenerated from seeds.
    #[arg(long, default_value_t = DEFAULT_MEMORY_BUDGET >> 20)]
    memory_budget_mib: u64,
    /// Fail instead of regenerating matrices when over budget.
    #[arg(long)]
    dense_only: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "demo_out")]
    out: PathBuf,
}

fn to_json(value: &impl serde::Serialize) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Internal(format!("json encoding: {e}")))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn gen(args: GenArgs) -> Result<()> {
    let dims = Dimensions::new(args.n, args.m, args.p, args.k)?;
    let storage = if args.compact {
        EnsembleStorage::Seeded
    } else {
        EnsembleStorage::Dense
    };
    let inst = ProblemInstance::generate_with(dims, args.rho, args.seed, storage)?;
    emit(&to_json(&inst.to_document(args.compact)?)?, args.out.as_deref())
}

fn solve(args: SolveArgs) -> Result<()> {
    let doc: InstanceDocument = parse_json(&args.instance)?;
    let inst = ProblemInstance::from_document(doc)?;
    let mut config = SolverConfig::new(args.k.unwrap_or(inst.dims.k), args.rho.unwrap_or(inst.rho));
    config.stop_tol = args.stop_tol;
    config.max_iters = args.max_iters;
    config.project_gains = args.project_gains;
    if args.wavelet {
        let side = (inst.dims.n as f64).sqrt().round() as usize;
        if side * side != inst.dims.n {
            return Err(Error::InvalidDimensions(format!(
                "n = {} is not a square image",
                inst.dims.n
            )));
        }
        config = config.with_basis(WaveletBasis::with_default_levels(side)?);
    }
    let result = with_threads(args.threads, || {
        if args.uncalibrated {
            solver::iht_solve_uncalibrated(&inst.ensemble, &inst.snapshots, &config)
        } else {
            solver::bc_iht_solve(&inst.ensemble, &inst.snapshots, &config)
        }
    })??;
    let evaluation = evaluate(&inst.truth_signal, &inst.truth_gains, &result)?;
    let report = json!({ "evaluation": evaluation, "result": result });
    emit(&format!("{}\n", to_json(&report)?), args.out.as_deref())
}

fn phase(args: PhaseArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => parse_json::<PhaseGridSpec>(path)?,
        None => PhaseGridSpec::desk_scale(),
    };
    if let Some(seed) = args.seed {
        spec.master_seed = seed;
    }
    spec.record_timing |= args.timing;
    spec.validate()?;
    let result = if args.f32 {
        run_phase_grid::<f32>(&spec, args.threads)?
    } else {
        run_phase_grid::<f64>(&spec, args.threads)?
    };
    emit(&emit_phase_csv(&result)?, args.out.as_deref())?;

    for &n in &spec.n_values {
        for &k in &spec.k_values {
            match fit_reference_constant(&result, n, k) {
                Some(c) => eprintln!("n={n} k={k}: fitted reference constant C = {c:.4}"),
                None => eprintln!("n={n} k={k}: no 50% crossing to fit a reference curve"),
            }
        }
    }
    Ok(())
}

fn demo(args: DemoArgs) -> Result<()> {
    let config = DemoConfig {
        image: args.image,
        side: args.side,
        k: args.k,
        m: args.m,
        p: args.p,
        rho: args.rho,
        seed: args.seed,
        grayscale: !args.color,
        stop_tol: args.stop_tol,
        max_iters: args.max_iters,
        levels: args.levels,
        memory_budget_bytes: args.memory_budget_mib.saturating_mul(1 << 20),
        allow_seeded: !args.dense_only,
    };
    let outcome = with_threads(args.threads, || run_imaging_demo(&config))??;
    write_outputs(&outcome, &args.out)?;
    let r = &outcome.report;
    println!(
        "BC-IHT: RSNR_x {:.2} dB, RSNR_g {:.2} dB; IHT: RSNR_x {:.2} dB; written to {}",
        r.bc_iht_rsnr_x_db,
        r.bc_iht_rsnr_g_db,
        r.iht_rsnr_x_db,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Solve(a) => solve(a),
        Command::Phase(a) => phase(a),
        Command::Demo(a) => demo(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
