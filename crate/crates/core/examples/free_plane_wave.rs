//! With zero mass the splitting integrator is exact: a plane wave follows
//! `cos(omega t)` for any step size.
//!
//! ```bash
//! cargo run --example free_plane_wave
//! ```

use std::sync::Arc;

use kglab::dynamics::{solve, FractionalOperator, TimeStep};
use kglab::spectral::{Field, RocklandSymbol};
use kglab::structure::{make_grid, DilationStructure};

fn main() -> kglab::Result<()> {
    let st = DilationStructure::isotropic(1);
    let grid = Arc::new(make_grid(&st, &[2.0 * std::f64::consts::PI], &[32])?);
    let op = FractionalOperator::new(RocklandSymbol::laplacian(&st)?, 0.7)?;
    let k = 4;
    let omega = (k as f64).powf(2.0 * 0.7 / 2.0);
    let wave = Field::plane_wave(grid.clone(), &[k]);
    let zero = Field::zeros(grid.clone());

    for dt in [1.0, 0.1, 0.01] {
        let traj = solve(&wave, &zero, &zero, &op, 10.0, TimeStep::Fixed(dt), usize::MAX)?;
        let exact = &wave * (omega * 10.0).cos();
        let err = (&traj.final_state().u - &exact).max_abs();
        println!("dt = {dt:<5} steps = {:<5} max error at T = 10: {err:.2e}", traj.steps);
    }
    Ok(())
}
