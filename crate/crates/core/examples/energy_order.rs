//! Energy drift of the symmetric splitting drops fourfold per halving of the
//! step: the integrator is second order.
//!
//! ```bash
//! cargo run --release --example energy_order
//! ```

use std::sync::Arc;

use kglab::dynamics::{solve, FractionalOperator, TimeStep};
use kglab::experiments::DataPreset;
use kglab::spectral::{Field, RocklandSymbol};
use kglab::structure::{make_grid, DilationStructure};
use num_complex::Complex64;

fn main() -> kglab::Result<()> {
    let st = DilationStructure::isotropic(1);
    let grid = Arc::new(make_grid(&st, &[40.0], &[256])?);
    let op = FractionalOperator::new(RocklandSymbol::laplacian(&st)?, 1.0)?;
    let (u0, u1) = DataPreset::Gaussian { amplitude: 1.0, width: 1.0, velocity: 0.5, center: None }.sample(&grid)?;
    let mass = Field::constant(grid.clone(), Complex64::new(1.0, 0.0));

    let mut previous: Option<f64> = None;
    for dt in [0.05, 0.025, 0.0125, 0.00625] {
        let traj = solve(&u0, &u1, &mass, &op, 5.0, TimeStep::Fixed(dt), 1)?;
        let drift = traj.relative_energy_drift();
        match previous {
            Some(p) => println!("dt = {dt:<8} drift = {drift:.4e}  ratio {:.3}", p / drift),
            None => println!("dt = {dt:<8} drift = {drift:.4e}"),
        }
        previous = Some(drift);
    }
    Ok(())
}
