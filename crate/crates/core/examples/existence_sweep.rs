//! Very weak solutions: the regularized solutions for a delta mass form a
//! moderate net. The seminorm series is fitted in log-log coordinates.
//!
//! ```bash
//! cargo run --release --example existence_sweep
//! ```

use kglab::dynamics::FractionalOperator;
use kglab::experiments::{existence_sweep, DataPreset, EpsilonNet, LabSetup, SolverConfig};
use kglab::mass::MassSpec;
use kglab::spectral::RocklandSymbol;
use kglab::structure::{make_grid, DilationStructure};

fn main() -> kglab::Result<()> {
    let st = DilationStructure::isotropic(1);
    let setup = LabSetup::new(
        make_grid(&st, &[20.0], &[256])?,
        FractionalOperator::new(RocklandSymbol::laplacian(&st)?, 1.0)?,
        DataPreset::Gaussian { amplitude: 1.0, width: 1.0, velocity: 0.0, center: None },
    )?;
    let report = existence_sweep(
        &MassSpec::DiracDelta { weight: 1.0 },
        &setup,
        &EpsilonNet::default(),
        &SolverConfig::default(),
    )?;
    print!("{}", report.summary());
    Ok(())
}
