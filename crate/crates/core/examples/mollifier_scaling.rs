//! `||psi_eps||_{L^p}` scales like `eps^{-Q(1 - 1/p)}`; the fitted exponents
//! certify the delta net as moderate in every `L^p`.
//!
//! ```bash
//! cargo run --release --example mollifier_scaling
//! ```

use std::sync::Arc;

use kglab::experiments::EpsilonNet;
use kglab::mass::{moderateness_witness, MassSpec, MollifierProfile};
use kglab::structure::{make_grid, DilationStructure};

fn main() -> kglab::Result<()> {
    let net = EpsilonNet::new(1.0, 0.8, 6)?;
    for weights in [[1, 1], [1, 2]] {
        let st = DilationStructure::from_integers(&weights)?;
        let q = st.q();
        let grid = Arc::new(make_grid(&st, &[2.5, 2.5], &[256, 256])?);
        let psi = MollifierProfile::new(2);
        println!("weights {weights:?}, Q = {q}");
        for p in [1.0, 2.0, 4.0, f64::INFINITY] {
            let w = moderateness_witness(&MassSpec::DiracDelta { weight: 1.0 }, p, net.values(), &grid, &psi)?;
            println!(
                "  p = {p:<4} exponent {:.4} (expected {:.4}), residual {:.1e}, moderate: {}",
                w.fit.slope,
                q * (1.0 - 1.0 / p),
                w.fit.residual,
                w.moderate
            );
        }
    }
    Ok(())
}
