//! Perturbing the regularized delta mass by `e^{-1/eps}` changes the solution
//! by a negligible net. The difference is computed twice, by subtraction and
//! as the solution of the forced difference equation, and the two agree.
//!
//! ```bash
//! cargo run --release --example uniqueness_negligibility
//! ```

use kglab::dynamics::FractionalOperator;
use kglab::experiments::{uniqueness_experiment, DataPreset, EpsilonNet, LabSetup, SolverConfig};
use kglab::mass::{MassSpec, PerturbationKind};
use kglab::spectral::RocklandSymbol;
use kglab::structure::{make_grid, DilationStructure};

fn main() -> kglab::Result<()> {
    let st = DilationStructure::isotropic(1);
    let setup = LabSetup::new(
        make_grid(&st, &[20.0], &[256])?,
        FractionalOperator::new(RocklandSymbol::laplacian(&st)?, 1.0)?,
        DataPreset::Gaussian { amplitude: 1.0, width: 1.0, velocity: 0.0, center: None },
    )?;
    let report = uniqueness_experiment(
        &MassSpec::DiracDelta { weight: 1.0 },
        PerturbationKind::ExpInverseEpsilon,
        &setup,
        &EpsilonNet::default(),
        &SolverConfig::default(),
    )?;
    print!("{}", report.summary());
    if let Some(v) = &report.negligibility {
        for m in v.margins.iter().step_by(3) {
            let tail: Vec<String> = m.ratios[m.tail_start..].iter().map(|r| format!("{r:.2e}")).collect();
            println!("  k = {:<2} tail ratios D/eps^k: {}", m.k, tail.join(" "));
        }
    }
    Ok(())
}
