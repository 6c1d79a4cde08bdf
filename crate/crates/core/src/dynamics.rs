//! Time integration of `u_tt + R^s u + m u = 0` on a periodic grid.
//!
//! The free part is propagated exactly mode by mode with `omega = a(xi)^{s/2}`;
//! the mass term enters as a kick `p <- p - dt m u`. Composing a half free
//! flow, a kick and a half free flow gives a symmetric second-order splitting
//! that is exact for `m = 0`.
//!
//! [`picard_duhamel_solve`] is an independent reference: it iterates the
//! Duhamel formula on a time grid and shares no code with the stepper beyond
//! the Fourier transform.

use std::sync::Arc;

use num_complex::Complex64;

use crate::diagnostics::{energy, EnergyRecord};
use crate::error::{Error, Result};
use crate::mass::NEGATIVITY_TOLERANCE;
use crate::spectral::{forward, forward_in_place, inverse, inverse_in_place, Field, RocklandSymbol, SpectralField};
use crate::structure::BoxGrid;

/// `sin(z)/z`, with a Taylor branch near zero.
pub fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}

/// The operator `R^s` for a fixed symbol and power.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalOperator {
    symbol: RocklandSymbol,
    s: f64,
}

impl FractionalOperator {
    pub fn new(symbol: RocklandSymbol, s: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Config(format!("fractional power s must be positive, got {s}")));
        }
        Ok(Self { symbol, s })
    }

    pub fn symbol(&self) -> &RocklandSymbol {
        &self.symbol
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// `nu * s`.
    pub fn nu_s(&self) -> f64 {
        self.symbol.nu() * self.s
    }

    /// Mode frequencies `a(xi)^{s/2}`, FFT ordered.
    pub fn omegas(&self, grid: &BoxGrid) -> Vec<f64> {
        self.symbol.power_on_grid(grid, self.s / 2.0)
    }

    pub fn max_omega(&self, grid: &BoxGrid) -> f64 {
        self.omegas(grid).into_iter().fold(0.0, f64::max)
    }
}

/// Displacement and velocity at time `t`.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: f64,
    pub u: Field,
    pub p: Field,
}

impl SolverState {
    pub fn new(t: f64, u: Field, p: Field) -> Result<Self> {
        u.check_same_grid(&p)?;
        if !u.all_finite() || !p.all_finite() {
            return Err(Error::Numerical(format!("non-finite state at t = {t}")));
        }
        Ok(Self { t, u, p })
    }

    pub fn grid(&self) -> &Arc<BoxGrid> {
        self.u.grid()
    }
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub state: SolverState,
    pub energy: EnergyRecord,
}

/// Snapshots at `t = 0`, every `stride` steps, and at the final time.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub dt: f64,
    pub steps: usize,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn final_state(&self) -> &SolverState {
        &self.snapshots.last().expect("trajectory has at least one snapshot").state
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.state.t).collect()
    }

    pub fn energies(&self) -> Vec<EnergyRecord> {
        self.snapshots.iter().map(|s| s.energy).collect()
    }

    /// `|E(T) - E(0)| / E(0)`, zero when `E(0) = 0`.
    pub fn relative_energy_drift(&self) -> f64 {
        let e0 = self.snapshots.first().map_or(0.0, |s| s.energy.total);
        let e1 = self.snapshots.last().map_or(0.0, |s| s.energy.total);
        if e0 == 0.0 {
            0.0
        } else {
            (e1 - e0).abs() / e0
        }
    }

    /// Energy ledger `t,kinetic,elastic,potential,total`.
    pub fn write_energy_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::diagnostics::write_energy_csv(&self.energies(), path)
    }

    /// Full snapshot dump `t,node,re_u,im_u,re_p,im_p`.
    pub fn write_snapshots_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "node", "re_u", "im_u", "re_p", "im_p"])?;
        for snap in &self.snapshots {
            let s = &snap.state;
            for (i, (u, p)) in s.u.values().iter().zip(s.p.values()).enumerate() {
                w.write_record([
                    format!("{:.12e}", s.t),
                    i.to_string(),
                    format!("{:.12e}", u.re),
                    format!("{:.12e}", u.im),
                    format!("{:.12e}", p.re),
                    format!("{:.12e}", p.im),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_mass(mass: &Field) -> Result<()> {
    let scale = mass.max_abs().max(1.0);
    if let Some(v) = mass.values().iter().find(|v| v.re < -NEGATIVITY_TOLERANCE * scale) {
        return Err(Error::Invariant(format!("mass takes negative value {}", v.re)));
    }
    Ok(())
}

/// Exact free propagation by `dt` (may be negative).
pub fn free_flow(state: &SolverState, op: &FractionalOperator, dt: f64) -> Result<SolverState> {
    let grid = state.grid().clone();
    let mut uh = forward(&state.u);
    let mut ph = forward(&state.p);
    for ((u, p), w) in uh.coefficients_mut().iter_mut().zip(ph.coefficients_mut()).zip(op.omegas(&grid)) {
        let (sn, cs) = (w * dt).sin_cos();
        let u0 = *u;
        *u = cs * u0 + dt * sinc(w * dt) * *p;
        *p = -w * sn * u0 + cs * *p;
    }
    SolverState::new(state.t + dt, inverse(&uh), inverse(&ph))
}

/// Exact flow of the mass part, `u' = 0, p' = -m u`, over `dt`.
pub fn mass_flow(state: &SolverState, mass: &Field, dt: f64) -> Result<SolverState> {
    state.u.check_same_grid(mass)?;
    check_mass(mass)?;
    let mut p = state.p.clone();
    for ((pv, uv), mv) in p.values_mut().iter_mut().zip(state.u.values()).zip(mass.values()) {
        *pv -= dt * mv.re * uv;
    }
    SolverState::new(state.t + dt, state.u.clone(), p)
}

/// One symmetric splitting step: half free flow, mass kick, half free flow.
pub fn strang_step(state: &SolverState, op: &FractionalOperator, mass: &Field, dt: f64) -> Result<SolverState> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    let half = free_flow(state, op, dt / 2.0)?;
    let kicked = mass_flow(&half, mass, dt)?;
    let mut out = free_flow(&kicked, op, dt / 2.0)?;
    out.t = state.t + dt;
    Ok(out)
}

/// Default step: a tenth of the fastest period scale, capped at `T/100`.
pub fn auto_time_step(op: &FractionalOperator, mass: &Field, t_final: f64) -> f64 {
    let m_sup = mass.max_abs();
    let w_max = op.max_omega(mass.grid());
    let from_mass = if m_sup > 0.0 { 1.0 / m_sup.sqrt() } else { f64::INFINITY };
    let from_symbol = if w_max > 0.0 { 1.0 / w_max } else { f64::INFINITY };
    (from_mass.min(from_symbol) / 10.0).min(t_final / 100.0)
}

/// Step count for `[0, T]`; `dt` must divide `T` up to rounding.
pub fn steps_for(t_final: f64, dt: f64) -> Result<usize> {
    if !(t_final > 0.0) || !(dt > 0.0) {
        return Err(Error::Config(format!("need T > 0 and dt > 0, got T = {t_final}, dt = {dt}")));
    }
    let steps = (t_final / dt).round();
    if steps < 1.0 || (steps * dt - t_final).abs() > 1e-9 * t_final {
        return Err(Error::Config(format!("dt = {dt} does not divide T = {t_final}")));
    }
    Ok(steps as usize)
}

/// Step size selection: explicit or automatic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeStep {
    Fixed(f64),
    /// [`auto_time_step`], rounded down so that it divides `T`.
    Auto,
}

impl TimeStep {
    pub fn resolve(self, op: &FractionalOperator, mass: &Field, t_final: f64) -> Result<(f64, usize)> {
        match self {
            TimeStep::Fixed(dt) => Ok((dt, steps_for(t_final, dt)?)),
            TimeStep::Auto => {
                if !(t_final > 0.0) {
                    return Err(Error::Config(format!("final time must be positive, got {t_final}")));
                }
                let steps = (t_final / auto_time_step(op, mass, t_final)).ceil().max(1.0) as usize;
                Ok((t_final / steps as f64, steps))
            }
        }
    }
}

/// Splitting integrator that keeps the state in Fourier space, so each step
/// costs two transforms (the kick needs `u` in physical space).
pub struct Stepper {
    grid: Arc<BoxGrid>,
    dt: f64,
    half_cos: Vec<f64>,
    half_sinc: Vec<f64>,
    half_wsin: Vec<f64>,
    mass: Vec<f64>,
    u_hat: Vec<Complex64>,
    p_hat: Vec<Complex64>,
    scratch: Vec<Complex64>,
    step_index: usize,
}

impl Stepper {
    pub fn new(op: &FractionalOperator, mass: &Field, u0: &Field, u1: &Field, dt: f64) -> Result<Self> {
        u0.check_same_grid(u1)?;
        u0.check_same_grid(mass)?;
        check_mass(mass)?;
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        let grid = u0.grid().clone();
        let omegas = op.omegas(&grid);
        let h = dt / 2.0;
        Ok(Self {
            half_cos: omegas.iter().map(|w| (w * h).cos()).collect(),
            half_sinc: omegas.iter().map(|w| h * sinc(w * h)).collect(),
            half_wsin: omegas.iter().map(|w| w * (w * h).sin()).collect(),
            mass: mass.values().iter().map(|v| v.re.max(0.0)).collect(),
            u_hat: forward(u0).coefficients().to_vec(),
            p_hat: forward(u1).coefficients().to_vec(),
            scratch: vec![Complex64::new(0.0, 0.0); grid.node_count()],
            grid,
            dt,
            step_index: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    fn half_free(&mut self) {
        for i in 0..self.u_hat.len() {
            let (u, p) = (self.u_hat[i], self.p_hat[i]);
            self.u_hat[i] = self.half_cos[i] * u + self.half_sinc[i] * p;
            self.p_hat[i] = -self.half_wsin[i] * u + self.half_cos[i] * p;
        }
    }

    /// Kick with mass and optional source; leaves the midpoint displacement
    /// in `scratch` before it is overwritten, returning a copy if asked.
    fn kick(&mut self, source: Option<&Field>, keep_mid: bool) -> Option<Field> {
        self.scratch.copy_from_slice(&self.u_hat);
        inverse_in_place(&mut self.scratch, &self.grid);
        let mid = keep_mid.then(|| {
            Field::new(self.grid.clone(), self.scratch.clone()).expect("midpoint on stepper grid")
        });
        for (v, m) in self.scratch.iter_mut().zip(&self.mass) {
            *v *= *m;
        }
        if let Some(f) = source {
            for (v, s) in self.scratch.iter_mut().zip(f.values()) {
                *v -= s;
            }
        }
        forward_in_place(&mut self.scratch, &self.grid);
        for (p, w) in self.p_hat.iter_mut().zip(&self.scratch) {
            *p -= self.dt * w;
        }
        mid
    }

    pub fn step(&mut self) {
        self.half_free();
        self.kick(None, false);
        self.half_free();
        self.step_index += 1;
    }

    /// Step with a source `f` sampled at the midpoint `t + dt/2`:
    /// `u_tt + R^s u + m u = f`.
    pub fn step_with_source(&mut self, source: &Field) -> Result<()> {
        source.check_same_grid(&Field::zeros(self.grid.clone()))?;
        self.half_free();
        self.kick(Some(source), false);
        self.half_free();
        self.step_index += 1;
        Ok(())
    }

    /// Step and return the midpoint displacement the kick acted on.
    pub fn step_returning_midpoint(&mut self) -> Field {
        self.half_free();
        let mid = self.kick(None, true).expect("midpoint requested");
        self.half_free();
        self.step_index += 1;
        mid
    }

    pub fn is_finite(&self) -> bool {
        self.u_hat.iter().chain(&self.p_hat).all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn state(&self) -> Result<SolverState> {
        let mut u = self.u_hat.clone();
        let mut p = self.p_hat.clone();
        inverse_in_place(&mut u, &self.grid);
        inverse_in_place(&mut p, &self.grid);
        SolverState::new(self.time(), Field::new(self.grid.clone(), u)?, Field::new(self.grid.clone(), p)?)
    }

    /// `u` only, for cheap comparisons.
    pub fn displacement(&self) -> Field {
        let mut u = self.u_hat.clone();
        inverse_in_place(&mut u, &self.grid);
        Field::new(self.grid.clone(), u).expect("stepper grid")
    }
}

/// Step indices at which snapshots are taken: 0, multiples of `stride`, last.
pub fn snapshot_due(step: usize, steps: usize, stride: usize) -> bool {
    step == 0 || step == steps || step % stride.max(1) == 0
}

/// Runs the splitting scheme and hands every snapshot state to `observer`.
/// Returns `(dt, steps)`.
pub fn solve_observed(
    u0: &Field,
    u1: &Field,
    mass: &Field,
    op: &FractionalOperator,
    t_final: f64,
    time_step: TimeStep,
    stride: usize,
    observer: &mut dyn FnMut(&SolverState) -> Result<()>,
) -> Result<(f64, usize)> {
    let (dt, steps) = time_step.resolve(op, mass, t_final)?;
    let mut stepper = Stepper::new(op, mass, u0, u1, dt)?;
    observer(&stepper.state()?)?;
    for n in 1..=steps {
        stepper.step();
        if snapshot_due(n, steps, stride) {
            if !stepper.is_finite() {
                return Err(Error::Numerical(format!("non-finite solution at step {n}, t = {}", stepper.time())));
            }
            let mut state = stepper.state()?;
            if n == steps {
                state.t = t_final;
            }
            observer(&state)?;
        }
    }
    Ok((dt, steps))
}

/// Solves `u_tt + R^s u + m u = 0`, `u(0) = u0`, `u_t(0) = u1` on `[0, T]`.
pub fn solve(
    u0: &Field,
    u1: &Field,
    mass: &Field,
    op: &FractionalOperator,
    t_final: f64,
    time_step: TimeStep,
    stride: usize,
) -> Result<Trajectory> {
    let mut snapshots = Vec::new();
    let (dt, steps) = solve_observed(u0, u1, mass, op, t_final, time_step, stride, &mut |state| {
        let e = energy(state, mass, op)?;
        snapshots.push(Snapshot { state: state.clone(), energy: e });
        Ok(())
    })?;
    Ok(Trajectory { dt, steps, snapshots })
}

/// Zero-data problem `U_tt + R^s U + m U = f`. `source(n, t_mid)` returns the
/// forcing at the midpoint of step `n`.
pub fn inhomogeneous_solve(
    source: &mut dyn FnMut(usize, f64) -> Result<Field>,
    mass: &Field,
    op: &FractionalOperator,
    t_final: f64,
    time_step: TimeStep,
    stride: usize,
) -> Result<Trajectory> {
    let (dt, steps) = time_step.resolve(op, mass, t_final)?;
    let zero = Field::zeros(mass.grid().clone());
    let mut stepper = Stepper::new(op, mass, &zero, &zero, dt)?;
    let mut snapshots = Vec::new();
    let mut record = |stepper: &Stepper, t: f64| -> Result<()> {
        let mut state = stepper.state()?;
        state.t = t;
        let e = energy(&state, mass, op)?;
        snapshots.push(Snapshot { state, energy: e });
        Ok(())
    };
    record(&stepper, 0.0)?;
    for n in 0..steps {
        let f = source(n, (n as f64 + 0.5) * dt)?;
        stepper.step_with_source(&f)?;
        if snapshot_due(n + 1, steps, stride) {
            if !stepper.is_finite() {
                return Err(Error::Numerical(format!("non-finite solution at step {}", n + 1)));
            }
            let t = if n + 1 == steps { t_final } else { stepper.time() };
            record(&stepper, t)?;
        }
    }
    Ok(Trajectory { dt, steps, snapshots })
}

/// Result of the Picard-Duhamel reference solve.
#[derive(Debug, Clone)]
pub struct PicardSolution {
    pub u: Field,
    pub p: Field,
    /// Iterations used on each subinterval.
    pub iterations: Vec<usize>,
    pub subintervals: usize,
}

/// Reference solution by fixed-point iteration of the Duhamel formula
///
/// `u(t) = cos(t w) u0 + sin(t w)/w u1 + int_0^t sin((t - r) w)/w f(r) dr`,
/// `f = -m u`, per Fourier mode, trapezoidal in `r` with step `dtau`.
///
/// The interval is split so that `tau^2 ||m||_inf <= 1/2` on each piece,
/// which makes every restarted iteration a contraction.
pub fn picard_duhamel_solve(
    u0: &Field,
    u1: &Field,
    mass: &Field,
    op: &FractionalOperator,
    t_final: f64,
    dtau: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PicardSolution> {
    u0.check_same_grid(u1)?;
    u0.check_same_grid(mass)?;
    check_mass(mass)?;
    if !(tol > 0.0) {
        return Err(Error::Domain("Picard tolerance must be positive".into()));
    }
    let total_steps = steps_for(t_final, dtau)?;
    let m_sup = mass.max_abs();
    let mut pieces = 1usize;
    while m_sup > 0.0 && (t_final / pieces as f64).powi(2) * m_sup > 0.5 {
        pieces += 1;
    }
    // Each piece is a whole number of quadrature steps.
    let pieces = pieces.min(total_steps);
    let base = total_steps / pieces;
    let extra = total_steps % pieces;

    let grid = u0.grid().clone();
    let omegas = op.omegas(&grid);
    let dv = grid.cell_volume();
    let mut uh = forward(u0).coefficients().to_vec();
    let mut ph = forward(u1).coefficients().to_vec();
    let mut iterations = Vec::with_capacity(pieces);

    for piece in 0..pieces {
        let steps = base + usize::from(piece < extra);
        let (u_end, p_end, iters) = picard_piece(&grid, &omegas, mass, &uh, &ph, dtau, steps, tol, max_iter, dv)?;
        uh = u_end;
        ph = p_end;
        iterations.push(iters);
    }
    let u = inverse(&SpectralField::new(grid.clone(), uh)?);
    let p = inverse(&SpectralField::new(grid, ph)?);
    Ok(PicardSolution { u, p, iterations, subintervals: pieces })
}

#[allow(clippy::too_many_arguments)]
fn picard_piece(
    grid: &Arc<BoxGrid>,
    omegas: &[f64],
    mass: &Field,
    uh0: &[Complex64],
    ph0: &[Complex64],
    dtau: f64,
    steps: usize,
    tol: f64,
    max_iter: usize,
    dv: f64,
) -> Result<(Vec<Complex64>, Vec<Complex64>, usize)> {
    let n = omegas.len();
    // Kernels at lags 0..=steps: S(tau) = sin(w tau)/w, C(tau) = cos(w tau).
    let sin_k: Vec<Vec<f64>> = (0..=steps)
        .map(|l| {
            let tau = l as f64 * dtau;
            omegas.iter().map(|w| tau * sinc(w * tau)).collect()
        })
        .collect();
    let cos_k: Vec<Vec<f64>> = (0..=steps)
        .map(|l| {
            let tau = l as f64 * dtau;
            omegas.iter().map(|w| (w * tau).cos()).collect()
        })
        .collect();
    let free: Vec<Vec<Complex64>> = (0..=steps)
        .map(|j| (0..n).map(|k| cos_k[j][k] * uh0[k] + sin_k[j][k] * ph0[k]).collect())
        .collect();

    let to_physical = |coeffs: &[Complex64]| -> Field {
        inverse(&SpectralField::new(grid.clone(), coeffs.to_vec()).expect("grid sized"))
    };
    let forcing_hat = |u: &Field| -> Vec<Complex64> {
        let f = u.pointwise_mul(mass).expect("same grid").map(|v| -v);
        forward(&f).coefficients().to_vec()
    };

    let mut current = free.clone();
    for iter in 1..=max_iter {
        let f_hat: Vec<Vec<Complex64>> = current.iter().map(|c| forcing_hat(&to_physical(c))).collect();
        let mut next = free.clone();
        for j in 1..=steps {
            for i in 0..=j {
                let w = if i == 0 || i == j { 0.5 * dtau } else { dtau };
                let kernel = &sin_k[j - i];
                for k in 0..n {
                    next[j][k] += w * kernel[k] * f_hat[i][k];
                }
            }
        }
        let change = next
            .iter()
            .zip(&current)
            .map(|(a, b)| (dv * a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>()).sqrt())
            .fold(0.0, f64::max);
        if !change.is_finite() {
            return Err(Error::Oracle("Picard iterates became non-finite".into()));
        }
        current = next;
        if change <= tol {
            // Velocity at the end of the piece from the differentiated formula.
            let f_hat: Vec<Vec<Complex64>> = current.iter().map(|c| forcing_hat(&to_physical(c))).collect();
            let mut p_end: Vec<Complex64> = (0..n)
                .map(|k| -omegas[k] * (omegas[k] * steps as f64 * dtau).sin() * uh0[k] + cos_k[steps][k] * ph0[k])
                .collect();
            for i in 0..=steps {
                let w = if i == 0 || i == steps { 0.5 * dtau } else { dtau };
                for k in 0..n {
                    p_end[k] += w * cos_k[steps - i][k] * f_hat[i][k];
                }
            }
            return Ok((current.pop().expect("nonempty"), p_end, iter));
        }
    }
    Err(Error::Oracle(format!("Picard iteration did not reach {tol:e} within {max_iter} iterations")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{make_grid, DilationStructure};
    use std::f64::consts::PI;

    fn setup(l: f64, n: usize, s: f64) -> (Arc<BoxGrid>, FractionalOperator) {
        let g = Arc::new(make_grid(&DilationStructure::isotropic(1), &[l], &[n]).unwrap());
        let op = FractionalOperator::new(RocklandSymbol::laplacian(g.structure()).unwrap(), s).unwrap();
        (g, op)
    }

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    #[test]
    fn free_flow_examples() {
        let (g, op) = setup(2.0 * PI, 16, 1.0);
        let e1 = Field::plane_wave(g.clone(), &[1]);
        let zero = Field::zeros(g.clone());
        let st = SolverState::new(0.0, e1.clone(), zero.clone()).unwrap();
        let out = free_flow(&st, &op, PI).unwrap();
        assert!((&out.u + &e1).max_abs() < 1e-13);

        let st = SolverState::new(0.0, Field::constant(g.clone(), c(2.0)), Field::constant(g.clone(), c(0.5))).unwrap();
        let out = free_flow(&st, &op, 3.0).unwrap();
        assert!((&out.u - &Field::constant(g.clone(), c(3.5))).max_abs() < 1e-13);

        let st = SolverState::new(0.0, zero.clone(), e1.clone()).unwrap();
        let out = free_flow(&st, &op, PI).unwrap();
        assert!(out.u.max_abs() < 1e-13);
        assert!((&out.p + &e1).max_abs() < 1e-13);
    }

    #[test]
    fn free_flow_is_reversible() {
        let (g, op) = setup(10.0, 64, 0.7);
        let u = Field::from_real_fn(g.clone(), |x| (-x[0] * x[0]).exp());
        let p = Field::from_real_fn(g.clone(), |x| x[0] * (-x[0] * x[0]).exp());
        let st = SolverState::new(0.0, u.clone(), p.clone()).unwrap();
        let back = free_flow(&free_flow(&st, &op, 0.83).unwrap(), &op, -0.83).unwrap();
        assert!((&back.u - &u).max_abs() < 1e-13);
        assert!((&back.p - &p).max_abs() < 1e-13);
    }

    #[test]
    fn mass_flow_examples() {
        let (g, _) = setup(4.0, 8, 1.0);
        let u = Field::from_real_fn(g.clone(), |x| x[0].cos());
        let p = Field::from_real_fn(g.clone(), |x| x[0].sin());
        let st = SolverState::new(0.0, u.clone(), p.clone()).unwrap();
        let out = mass_flow(&st, &Field::zeros(g.clone()), 0.3).unwrap();
        assert_eq!(out.u.values(), u.values());
        assert_eq!(out.p.values(), p.values());

        let four = Field::constant(g.clone(), c(4.0));
        let out = mass_flow(&st, &four, 0.5).unwrap();
        let expected = &p - &(&u * 2.0);
        assert!((&out.p - &expected).max_abs() < 1e-15);

        let back = mass_flow(&mass_flow(&st, &four, 0.7).unwrap(), &four, -0.7).unwrap();
        assert!((&back.p - &p).max_abs() < 1e-12);

        let negative = Field::constant(g.clone(), c(-1.0));
        assert!(matches!(mass_flow(&st, &negative, 0.1), Err(Error::Invariant(_))));
    }

    #[test]
    fn strang_without_mass_is_free_flow() {
        let (g, op) = setup(8.0, 32, 1.3);
        let u = Field::from_real_fn(g.clone(), |x| (-x[0] * x[0]).exp());
        let st = SolverState::new(0.0, u, Field::zeros(g.clone())).unwrap();
        let a = strang_step(&st, &op, &Field::zeros(g.clone()), 0.4).unwrap();
        let b = free_flow(&st, &op, 0.4).unwrap();
        assert!((&a.u - &b.u).max_abs() < 1e-14);
        assert!((&a.p - &b.p).max_abs() < 1e-14);
    }

    #[test]
    fn stepper_matches_field_level_strang_step() {
        let (g, op) = setup(12.0, 64, 0.8);
        let u = Field::from_real_fn(g.clone(), |x| (-x[0] * x[0]).exp());
        let p = Field::from_real_fn(g.clone(), |x| -x[0] * (-x[0] * x[0] / 2.0).exp());
        let m = Field::from_real_fn(g.clone(), |x| 1.0 + x[0].cos());
        let mut st = SolverState::new(0.0, u.clone(), p.clone()).unwrap();
        let mut stepper = Stepper::new(&op, &m, &u, &p, 0.05).unwrap();
        for _ in 0..10 {
            st = strang_step(&st, &op, &m, 0.05).unwrap();
            stepper.step();
        }
        let fast = stepper.state().unwrap();
        assert!((&fast.u - &st.u).max_abs() < 1e-13);
        assert!((&fast.p - &st.p).max_abs() < 1e-13);
        assert!((fast.t - st.t).abs() < 1e-14);
    }

    #[test]
    fn single_mode_with_constant_mass_follows_dispersion_relation() {
        let (g, op) = setup(2.0 * PI, 16, 1.0);
        let cm = 3.0;
        let mass = Field::constant(g.clone(), c(cm));
        let e1 = Field::plane_wave(g.clone(), &[1]);
        let zero = Field::zeros(g.clone());
        let t = 2.0;
        let err = |dt: f64| {
            let traj = solve(&e1, &zero, &mass, &op, t, TimeStep::Fixed(dt), 1000).unwrap();
            let exact = &e1 * (t * (1.0 + cm).sqrt()).cos();
            (&traj.final_state().u - &exact).max_abs()
        };
        let (e1_, e2_) = (err(0.02), err(0.01));
        assert!(e1_ < 1e-2);
        let ratio = e1_ / e2_;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn snapshots_cover_the_interval() {
        let (g, op) = setup(8.0, 16, 1.0);
        let u = Field::from_real_fn(g.clone(), |x| (-x[0] * x[0]).exp());
        let z = Field::zeros(g.clone());
        let traj = solve(&u, &z, &z, &op, 1.0, TimeStep::Fixed(0.1), 3).unwrap();
        let ts = traj.times();
        assert_eq!(ts.first(), Some(&0.0));
        assert_eq!(ts.last(), Some(&1.0));
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(ts.len(), 5);
        assert!(matches!(solve(&u, &z, &z, &op, 1.0, TimeStep::Fixed(0.3), 3), Err(Error::Config(_))));
    }

    #[test]
    fn auto_step_respects_caps() {
        let (g, op) = setup(2.0 * PI, 16, 1.0);
        let mass = Field::constant(g.clone(), c(100.0));
        // max omega = 8, sqrt(m) = 10.
        assert!((auto_time_step(&op, &mass, 100.0) - 0.01).abs() < 1e-15);
        assert!((auto_time_step(&op, &Field::zeros(g.clone()), 100.0) - 0.0125).abs() < 1e-15);
        assert!((auto_time_step(&op, &Field::zeros(g.clone()), 0.5) - 0.005).abs() < 1e-15);
        let (dt, steps) = TimeStep::Auto.resolve(&op, &mass, 1.0).unwrap();
        assert_eq!(steps, 100);
        assert!((dt - 0.01).abs() < 1e-15);
    }

    #[test]
    fn picard_without_mass_returns_free_part() {
        let (g, op) = setup(2.0 * PI, 16, 1.0);
        let e1 = Field::plane_wave(g.clone(), &[1]);
        let z = Field::zeros(g.clone());
        let sol = picard_duhamel_solve(&e1, &e1, &z, &op, 1.0, 0.1, 1e-12, 5).unwrap();
        assert_eq!(sol.iterations, vec![1]);
        let exact = &(&e1 * 1f64.cos()) + &(&e1 * 1f64.sin());
        assert!((&sol.u - &exact).max_abs() < 1e-13);
    }

    #[test]
    fn inhomogeneous_constant_forcing_matches_closed_form() {
        // v'' + w^2 v = c on the single mode e^{2ix}: v = c (1 - cos(w t)) / w^2.
        let (g, op) = setup(2.0 * PI, 16, 1.0);
        let z = Field::zeros(g.clone());
        let e2 = Field::plane_wave(g.clone(), &[2]);
        let forcing = &e2 * 0.7;
        let t = 1.3;
        let traj = inhomogeneous_solve(&mut |_, _| Ok(forcing.clone()), &z, &op, t, TimeStep::Fixed(0.01), 1000).unwrap();
        let w: f64 = 2.0;
        let exact = &e2 * (0.7 * (1.0 - (w * t).cos()) / (w * w));
        assert!((&traj.final_state().u - &exact).max_abs() < 1e-4);

        let none = inhomogeneous_solve(&mut |_, _| Ok(z.clone()), &z, &op, t, TimeStep::Fixed(0.1), 2).unwrap();
        assert!(none.snapshots.iter().all(|s| s.state.u.max_abs() == 0.0 && s.state.p.max_abs() == 0.0));
    }

    #[test]
    fn sinc_branches_agree() {
        for z in [1e-5, 9.9e-5, 1e-4, 1.01e-4, 0.3] {
            assert!((sinc(z) - z.sin() / z).abs() < 1e-15);
        }
        assert_eq!(sinc(0.0), 1.0);
    }
}
