//! Powers of a Rockland symbol applied as Fourier multipliers.
//!
//! On weights (1, 2) the symbol `xi_1^4 + xi_2^2` is homogeneous of degree 4.
//! A plane wave is an eigenfunction of every power, and powers compose.
//!
//! ```bash
//! cargo run --example fractional_multiplier
//! ```

use std::sync::Arc;

use kglab::diagnostics::spectral_l2_norm;
use kglab::mass::lp_norm;
use kglab::spectral::{apply_power, Field, RocklandSymbol};
use kglab::structure::{make_grid, DilationStructure};

fn main() -> kglab::Result<()> {
    let st = DilationStructure::from_integers(&[1, 2])?;
    let grid = Arc::new(make_grid(&st, &[2.0 * std::f64::consts::PI, 4.0], &[32, 32])?);
    let symbol = RocklandSymbol::new(&st, &[2, 1])?;
    println!("symbol degree nu = {}", symbol.degree());

    let k = [3, -2];
    let wave = Field::plane_wave(grid.clone(), &k);
    let xi = [3.0, -2.0 * 2.0 * std::f64::consts::PI / 4.0];
    for sigma in [0.25, 0.5, 1.0] {
        let out = apply_power(&symbol, sigma, &wave)?;
        let expected = symbol.eval(&xi).powf(sigma);
        println!("sigma = {sigma}: eigenvalue {:.12}, expected {expected:.12}", out.values()[0].norm());
    }

    let f = Field::from_real_fn(grid.clone(), |x| (-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp());
    let two_steps = apply_power(&symbol, 0.3, &apply_power(&symbol, 0.4, &f)?)?;
    let one_step = apply_power(&symbol, 0.7, &f)?;
    println!("semigroup defect {:.2e}", (&two_steps - &one_step).max_abs());
    println!("Parseval: physical {:.15}, spectral {:.15}", lp_norm(&f, 2.0)?, spectral_l2_norm(&f));
    Ok(())
}
