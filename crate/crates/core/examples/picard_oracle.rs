//! Cross-checks the splitting solver against a Picard iteration of the
//! Duhamel formula, for a delta mass regularized at eps = 0.25.
//!
//! ```bash
//! cargo run --release --example picard_oracle
//! ```

use std::sync::Arc;

use kglab::dynamics::{picard_duhamel_solve, solve, FractionalOperator, TimeStep};
use kglab::experiments::DataPreset;
use kglab::mass::{lp_norm, regularize, MassSpec, MollifierProfile};
use kglab::spectral::RocklandSymbol;
use kglab::structure::{make_grid, DilationStructure};

fn main() -> kglab::Result<()> {
    let st = DilationStructure::isotropic(1);
    let grid = Arc::new(make_grid(&st, &[8.0], &[64])?);
    let op = FractionalOperator::new(RocklandSymbol::laplacian(&st)?, 1.0)?;
    let (u0, u1) = DataPreset::Gaussian { amplitude: 1.0, width: 0.5, velocity: 1.0, center: None }.sample(&grid)?;
    let m = regularize(&MassSpec::DiracDelta { weight: 1.0 }, 0.25, &grid, &MollifierProfile::new(1))?;

    let reference = picard_duhamel_solve(&u0, &u1, m.field(), &op, 1.0, 2.5e-4, 1e-13, 200)?;
    println!(
        "Picard: {} subintervals, iterations {:?}",
        reference.subintervals, reference.iterations
    );
    let norm = lp_norm(&reference.u, 2.0)?;
    for dt in [0.04, 0.02, 0.01, 0.005] {
        let traj = solve(&u0, &u1, m.field(), &op, 1.0, TimeStep::Fixed(dt), usize::MAX)?;
        let gap = lp_norm(&(&traj.final_state().u - &reference.u), 2.0)? / norm;
        println!("dt = {dt:<6} relative L2 gap {gap:.3e}");
    }
    Ok(())
}
