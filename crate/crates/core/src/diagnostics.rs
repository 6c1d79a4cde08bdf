//! Energy, Sobolev norms and the meters that compare solutions against the
//! a-priori estimates.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{FractionalOperator, SolverState, Trajectory};
use crate::error::{Error, Result};
use crate::mass::lp_norm;
use crate::spectral::{apply_power, forward, Field, RocklandSymbol};

/// `E = ||u_t||^2 + ||R^{s/2} u||^2 + ||sqrt(m) u||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub t: f64,
    pub kinetic: f64,
    pub elastic: f64,
    pub potential: f64,
    pub total: f64,
}

pub fn energy(state: &SolverState, mass: &Field, op: &FractionalOperator) -> Result<EnergyRecord> {
    state.u.check_same_grid(mass)?;
    let dv = state.u.grid().cell_volume();
    let kinetic = lp_norm(&state.p, 2.0)?.powi(2);
    let elastic = lp_norm(&apply_power(op.symbol(), op.s() / 2.0, &state.u)?, 2.0)?.powi(2);
    let potential = dv
        * state
            .u
            .values()
            .iter()
            .zip(mass.values())
            .map(|(u, m)| m.re.max(0.0) * u.norm_sqr())
            .sum::<f64>();
    Ok(EnergyRecord { t: state.t, kinetic, elastic, potential, total: kinetic + elastic + potential })
}

pub fn write_energy_csv(records: &[EnergyRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "kinetic", "elastic", "potential", "total"])?;
    for r in records {
        w.write_record([r.t, r.kinetic, r.elastic, r.potential, r.total].map(|v| format!("{v:.15e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// `L^2` norm computed on the Fourier side.
pub fn spectral_l2_norm(f: &Field) -> f64 {
    (f.grid().cell_volume() * forward(f).energy_sum()).sqrt()
}

/// Homogeneous Sobolev norm `||R^{sigma/nu} f||_{L^2}`; plain `L^2` at `sigma = 0`.
pub fn sobolev_dot_norm(f: &Field, sigma: f64, symbol: &RocklandSymbol) -> Result<f64> {
    sobolev_dot_norm_p(f, sigma, symbol, 2.0)
}

/// `||R^{sigma/nu} f||_{L^p}`.
pub fn sobolev_dot_norm_p(f: &Field, sigma: f64, symbol: &RocklandSymbol, p: f64) -> Result<f64> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::Domain(format!("Sobolev order must be nonnegative, got {sigma}")));
    }
    lp_norm(&apply_power(symbol, sigma / symbol.nu(), f)?, p)
}

/// Inhomogeneous norm: dot norm plus `L^2`.
pub fn sobolev_h_norm(f: &Field, sigma: f64, symbol: &RocklandSymbol) -> Result<f64> {
    Ok(sobolev_dot_norm(f, sigma, symbol)? + lp_norm(f, 2.0)?)
}

/// `||f||_{L^{q0}_a} / ||f||_{L^{q~0}_b}` for an admissible embedding pair
/// `b - a = Q (1/q~0 - 1/q0)`, `1 < q~0 < q0 < inf`.
pub fn embedding_ratio(
    f: &Field,
    symbol: &RocklandSymbol,
    b: f64,
    q_tilde: f64,
    a: f64,
    q0: f64,
) -> Result<f64> {
    if !(1.0 < q_tilde && q_tilde < q0 && q0.is_finite()) {
        return Err(Error::Config(format!("need 1 < q~0 < q0 < inf, got q~0 = {q_tilde}, q0 = {q0}")));
    }
    let q = symbol.structure().q();
    let required = q * (1.0 / q_tilde - 1.0 / q0);
    if ((b - a) - required).abs() > 1e-12 * required.abs().max(1.0) {
        return Err(Error::Config(format!(
            "embedding exponents violate b - a = Q (1/q~0 - 1/q0): {} vs {required}",
            b - a
        )));
    }
    let top = sobolev_dot_norm_p(f, a, symbol, q0)?;
    let bottom = sobolev_dot_norm_p(f, b, symbol, q_tilde)?;
    if bottom == 0.0 {
        return Err(Error::Domain("embedding ratio undefined: denominator vanishes".into()));
    }
    Ok(top / bottom)
}

/// Target exponent `q0 = 2Q / (Q - 2b)` for `q~0 = 2`, `a = 0`.
pub fn embedding_target_exponent(q: f64, b: f64) -> Result<f64> {
    if !(q > 2.0 * b) {
        return Err(Error::Config(format!("need Q > 2b, got Q = {q}, b = {b}")));
    }
    Ok(2.0 * q / (q - 2.0 * b))
}

/// Which a-priori estimate the ratio is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateFlavor {
    /// `(1 + ||m||_inf) (||u1|| + ||u0||_{H^{s nu/2}})`.
    Prop31,
    /// `(1 + ||m||_{2Q/(nu s)}) (1 + ||m||_{Q/(nu s)})^{1/2} (||u1|| + ||u0||_{H^{s nu/2}})`,
    /// requires `Q > nu s`.
    Prop32,
}

impl EstimateFlavor {
    pub fn name(&self) -> &'static str {
        match self {
            EstimateFlavor::Prop31 => "Prop31",
            EstimateFlavor::Prop32 => "Prop32",
        }
    }
}

/// `||u||_{H^{s nu/2}} + ||u_t||_{L^2}`.
pub fn estimate_lhs(state: &SolverState, op: &FractionalOperator) -> Result<f64> {
    let order = op.nu_s() / 2.0;
    Ok(sobolev_h_norm(&state.u, order, op.symbol())? + lp_norm(&state.p, 2.0)?)
}

/// Right-hand side of the chosen estimate, without its hidden constant.
pub fn estimate_rhs(
    u0: &Field,
    u1: &Field,
    mass: &Field,
    op: &FractionalOperator,
    flavor: EstimateFlavor,
) -> Result<f64> {
    let data = lp_norm(u1, 2.0)? + sobolev_h_norm(u0, op.nu_s() / 2.0, op.symbol())?;
    let factor = match flavor {
        EstimateFlavor::Prop31 => 1.0 + lp_norm(mass, f64::INFINITY)?,
        EstimateFlavor::Prop32 => {
            let q = mass.grid().structure().q();
            let nu_s = op.nu_s();
            if !(q > nu_s) {
                return Err(Error::Config(format!(
                    "the critical-Lebesgue estimate requires Q > nu s, got Q = {q}, nu s = {nu_s}"
                )));
            }
            (1.0 + lp_norm(mass, 2.0 * q / nu_s)?) * (1.0 + lp_norm(mass, q / nu_s)?).sqrt()
        }
    };
    Ok(factor * data)
}

/// Ratio `LHS(t) / RHS` along a trajectory.
pub fn estimate_ratio(
    trajectory: &Trajectory,
    u0: &Field,
    u1: &Field,
    mass: &Field,
    op: &FractionalOperator,
    flavor: EstimateFlavor,
) -> Result<Vec<(f64, f64)>> {
    let rhs = estimate_rhs(u0, u1, mass, op, flavor)?;
    trajectory
        .snapshots
        .iter()
        .map(|snap| {
            let lhs = estimate_lhs(&snap.state, op)?;
            Ok((snap.state.t, if lhs == 0.0 { 0.0 } else { lhs / rhs }))
        })
        .collect()
}

/// `(t, value)` series with a header naming the flavor and config hash.
pub fn write_series_csv(
    series: &[(f64, f64)],
    flavor: &str,
    config_hash: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# flavor={flavor} config_hash={config_hash}")?;
    writeln!(file, "t,value")?;
    for (t, v) in series {
        writeln!(file, "{t:.12e},{v:.12e}")?;
    }
    Ok(())
}
