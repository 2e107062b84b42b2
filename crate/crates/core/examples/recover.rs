//! Draw one instance, recover it with and without gain calibration.

use bciht::solver::{bc_iht_solve, evaluate, iht_solve_uncalibrated};
use bciht::{Dimensions, ProblemInstance, SolverConfig};

fn main() -> bciht::Result<()> {
    let dims = Dimensions::new(128, 64, 6, 8)?;
    let inst = ProblemInstance::generate(dims, 0.5, 7)?;
    let config = SolverConfig::new(dims.k, 0.5);

    for (name, result) in [
        ("bc-iht", bc_iht_solve(&inst.ensemble, &inst.snapshots, &config)?),
        ("iht", iht_solve_uncalibrated(&inst.ensemble, &inst.snapshots, &config)?),
    ] {
        let eval = evaluate(&inst.truth_signal, &inst.truth_gains, &result)?;
        println!(
            "{name:>7}: {:?} after {} iterations, RSNR_x {:.1} dB, RSNR_g {:.1} dB",
            result.termination, result.iterations, eval.rsnr_x_db, eval.rsnr_g_db
        );
    }
    Ok(())
}
