//! For a continuous bump mass the very weak solution converges to the
//! classical one. With `s = 0.4` on R^1 we have `Q > nu s`, so the
//! critical-Lebesgue estimate is metered as well.
//!
//! ```bash
//! cargo run --release --example consistency
//! ```

use kglab::dynamics::{FractionalOperator, TimeStep};
use kglab::experiments::{consistency_experiment, DataPreset, EpsilonNet, LabSetup, SolverConfig};
use kglab::mass::{BoundedProfile, MassSpec};
use kglab::spectral::RocklandSymbol;
use kglab::structure::{make_grid, DilationStructure};

fn main() -> kglab::Result<()> {
    let st = DilationStructure::isotropic(1);
    let setup = LabSetup::new(
        make_grid(&st, &[20.0], &[256])?,
        FractionalOperator::new(RocklandSymbol::laplacian(&st)?, 0.4)?,
        DataPreset::Gaussian { amplitude: 1.0, width: 1.0, velocity: 0.0, center: None },
    )?;
    let solver = SolverConfig { time_step: TimeStep::Fixed(0.01), ..SolverConfig::default() };
    let bump = MassSpec::Bounded(BoundedProfile::Gaussian { amplitude: 1.0, width: 1.0, center: None });
    let report = consistency_experiment(&bump, &setup, &EpsilonNet::default(), &solver, &Default::default())?;
    print!("{}", report.summary());
    Ok(())
}
