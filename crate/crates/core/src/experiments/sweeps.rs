use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use super::{fit_exponent, negligibility_check, EpsilonNet, ExponentFit, LabSetup, NegligibilityVerdict, SolverConfig};
use crate::diagnostics::{energy, estimate_lhs, estimate_rhs, EstimateFlavor};
use crate::dynamics::{snapshot_due, solve_observed, SolverState, Stepper, TimeStep};
use crate::error::{Error, Result};
use crate::mass::{lp_norm, regularize, resolving_grid, MassSpec, PerturbationKind};
use crate::spectral::Field;
use crate::structure::BoxGrid;

/// Largest fitted slope of the estimate ratio against `log(1/eps)` still
/// counted as "not diverging".
pub const RATIO_SLOPE_TOLERANCE: f64 = 0.05;

/// Relative agreement required between the two routes to the uniqueness difference.
pub const CROSS_VALIDATION_TOLERANCE: f64 = 1e-6;

/// Factor on the discretization floor used by the consistency verdict.
pub const FLOOR_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct MassNorm {
    pub label: String,
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlavorMax {
    pub flavor: EstimateFlavor,
    pub max_ratio: f64,
}

/// Everything measured at one epsilon.
#[derive(Debug, Clone, Serialize)]
pub struct EpsilonRecord {
    pub epsilon: f64,
    pub resolved: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unresolved_reason: Option<String>,
    pub counts: Vec<usize>,
    pub dt: f64,
    pub steps: usize,
    /// `sup_t ||u||_{H^{s nu/2}} + ||u_t||_{L^2}`.
    pub seminorm: f64,
    /// Experiment-specific difference (`D` or `C`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub difference: Option<f64>,
    /// Uniqueness only: `sup_t ||u - u~||` computed by subtraction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub difference_direct: Option<f64>,
    pub mass_norms: Vec<MassNorm>,
    pub energy_drift: f64,
    pub estimates: Vec<FlavorMax>,
    pub runtime_seconds: f64,
}

impl EpsilonRecord {
    fn unresolved(epsilon: f64, reason: String) -> Self {
        Self {
            epsilon,
            resolved: false,
            unresolved_reason: Some(reason),
            counts: Vec::new(),
            dt: f64::NAN,
            steps: 0,
            seminorm: f64::NAN,
            difference: None,
            difference_direct: None,
            mass_norms: Vec::new(),
            energy_drift: f64::NAN,
            estimates: Vec::new(),
            runtime_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedFit {
    pub name: String,
    pub fit: ExponentFit,
}

/// A yes/no conclusion together with the numbers behind it.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub criterion: String,
    /// `(eps, value)` series the verdict was computed from.
    pub series: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossValidation {
    pub epsilon: f64,
    pub duhamel: f64,
    pub direct: f64,
    pub relative_gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub experiment: String,
    pub descriptor: serde_json::Value,
    pub net: Vec<f64>,
    pub k_max: u32,
    pub records: Vec<EpsilonRecord>,
    pub fits: Vec<NamedFit>,
    pub verdicts: Vec<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negligibility: Option<NegligibilityVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_validation: Option<CrossValidation>,
    /// Consistency only: `sup_t ||u_work[m] - u_ref||`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    /// Largest estimate ratio seen anywhere in the sweep.
    pub estimate_constant: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl SweepReport {
    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn fit(&self, name: &str) -> Option<&ExponentFit> {
        self.fits.iter().find(|f| f.name == name).map(|f| &f.fit)
    }

    pub fn resolved(&self) -> impl Iterator<Item = &EpsilonRecord> {
        self.records.iter().filter(|r| r.resolved)
    }

    pub fn all_passed(&self) -> bool {
        self.failure.is_none() && self.verdicts.iter().all(|v| v.passed)
    }

    /// Per-epsilon table, one row per net point.
    pub fn write_records_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "epsilon",
            "resolved",
            "counts",
            "dt",
            "steps",
            "seminorm",
            "difference",
            "difference_direct",
            "energy_drift",
            "max_ratio_prop31",
            "max_ratio_prop32",
            "runtime_seconds",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        for r in &self.records {
            let ratio = |f: EstimateFlavor| r.estimates.iter().find(|e| e.flavor == f).map(|e| e.max_ratio);
            w.write_record([
                format!("{:.12e}", r.epsilon),
                r.resolved.to_string(),
                r.counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("x"),
                format!("{:.12e}", r.dt),
                r.steps.to_string(),
                format!("{:.12e}", r.seminorm),
                opt(r.difference),
                opt(r.difference_direct),
                format!("{:.12e}", r.energy_drift),
                opt(ratio(EstimateFlavor::Prop31)),
                opt(ratio(EstimateFlavor::Prop32)),
                format!("{:.3}", r.runtime_seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut out = format!("{} sweep over {} epsilons (K_max = {})\n", self.experiment, self.net.len(), self.k_max);
        for r in &self.records {
            if r.resolved {
                out.push_str(&format!(
                    "  eps = {:.4e}  grid {:>12}  S = {:.6e}",
                    r.epsilon,
                    r.counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("x"),
                    r.seminorm
                ));
                if let Some(d) = r.difference {
                    out.push_str(&format!("  diff = {d:.6e}"));
                }
                out.push_str(&format!("  drift = {:.2e}\n", r.energy_drift));
            } else {
                out.push_str(&format!(
                    "  eps = {:.4e}  unresolved: {}\n",
                    r.epsilon,
                    r.unresolved_reason.as_deref().unwrap_or("")
                ));
            }
        }
        for f in &self.fits {
            out.push_str(&format!(
                "  fit {:<14} exponent {:+.4} residual {:.3e} ({} points)\n",
                f.name, f.fit.slope, f.fit.residual, f.fit.points
            ));
        }
        if let Some(floor) = self.floor {
            out.push_str(&format!("  discretization floor {floor:.6e}\n"));
        }
        if let Some(cv) = &self.cross_validation {
            out.push_str(&format!(
                "  cross-validation at eps = {:.4e}: relative gap {:.3e} (tolerance {:.0e})\n",
                cv.epsilon, cv.relative_gap, cv.tolerance
            ));
        }
        out.push_str(&format!("  estimate constant {:.6e}\n", self.estimate_constant));
        for v in &self.verdicts {
            out.push_str(&format!(
                "  [{}] {}: {}\n",
                if v.passed { "pass" } else { "FAIL" },
                v.name,
                v.criterion
            ));
        }
        if let Some(f) = &self.failure {
            out.push_str(&format!("  aborted: {f}\n"));
        }
        out
    }
}

/// Running sup of the seminorm, estimate ratios and energy drift.
struct Meter<'a> {
    setup: &'a LabSetup,
    mass: &'a Field,
    rhs: Vec<(EstimateFlavor, f64)>,
    ratio_max: Vec<f64>,
    seminorm: f64,
    e0: Option<f64>,
    drift: f64,
}

impl<'a> Meter<'a> {
    fn new(setup: &'a LabSetup, mass: &'a Field, u0: &Field, u1: &Field) -> Result<Self> {
        let mut flavors = vec![EstimateFlavor::Prop31];
        if setup.subcritical() {
            flavors.push(EstimateFlavor::Prop32);
        }
        let rhs = flavors
            .into_iter()
            .map(|f| Ok((f, estimate_rhs(u0, u1, mass, &setup.op, f)?)))
            .collect::<Result<Vec<_>>>()?;
        let ratio_max = vec![0.0; rhs.len()];
        Ok(Self { setup, mass, rhs, ratio_max, seminorm: 0.0, e0: None, drift: 0.0 })
    }

    fn observe(&mut self, state: &SolverState) -> Result<()> {
        let lhs = estimate_lhs(state, &self.setup.op)?;
        if !lhs.is_finite() {
            return Err(Error::Numerical(format!("non-finite seminorm at t = {}", state.t)));
        }
        self.seminorm = self.seminorm.max(lhs);
        for ((_, rhs), max) in self.rhs.iter().zip(&mut self.ratio_max) {
            if lhs > 0.0 {
                *max = max.max(lhs / rhs);
            }
        }
        let e = energy(state, self.mass, &self.setup.op)?.total;
        match self.e0 {
            None => self.e0 = Some(e),
            Some(e0) => {
                let scale = if e0.abs() > 0.0 { e0.abs() } else { 1.0 };
                self.drift = self.drift.max((e - e0).abs() / scale);
            }
        }
        Ok(())
    }

    fn estimates(&self) -> Vec<FlavorMax> {
        self.rhs.iter().zip(&self.ratio_max).map(|((f, _), m)| FlavorMax { flavor: *f, max_ratio: *m }).collect()
    }
}

fn mass_norms(m: &Field, nu_s: f64) -> Result<Vec<MassNorm>> {
    let q = m.grid().structure().q();
    let mut out = Vec::new();
    for (label, p) in [("1", 1.0), ("Q/(nu s)", q / nu_s), ("2Q/(nu s)", 2.0 * q / nu_s), ("inf", f64::INFINITY)] {
        if p >= 1.0 {
            out.push(MassNorm { label: label.into(), p, value: lp_norm(m, p)? });
        }
    }
    Ok(out)
}

fn descriptor(experiment: &str, setup: &LabSetup, spec: &MassSpec, solver: &SolverConfig) -> serde_json::Value {
    serde_json::json!({
        "experiment": experiment,
        "mass": spec,
        "mass_label": spec.label(),
        "data": setup.data,
        "grid": setup.grid.describe(),
        "weights": setup.grid.structure().weights_f64(),
        "homogeneous_dimension": setup.grid.structure().q(),
        "symbol_exponents": setup.op.symbol().exponents(),
        "nu": setup.op.symbol().nu(),
        "s": setup.op.s(),
        "t_final": solver.t_final,
        "time_step": match solver.time_step {
            TimeStep::Fixed(dt) => serde_json::json!(dt),
            TimeStep::Auto => serde_json::json!("auto"),
        },
        "stride": solver.stride,
        "max_count": solver.max_count,
    })
}

/// Runs `job` on every epsilon in parallel. Unresolvable epsilons become
/// flagged records; configuration errors propagate; any other error stops
/// the sweep and is reported as the failure alongside the records computed
/// before it.
fn run_net<F>(net: &EpsilonNet, job: F) -> Result<(Vec<EpsilonRecord>, Option<String>)>
where
    F: Fn(f64) -> Result<EpsilonRecord> + Sync,
{
    let results: Vec<Result<EpsilonRecord>> = net.values().par_iter().map(|&eps| job(eps)).collect();
    let mut records = Vec::with_capacity(results.len());
    for (eps, r) in net.values().iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(Error::Resolution { reason, .. }) => records.push(EpsilonRecord::unresolved(*eps, reason)),
            Err(e @ (Error::Config(_) | Error::Domain(_) | Error::GridMismatch(_))) => return Err(e),
            Err(e) => return Ok((records, Some(format!("eps = {eps:e}: {e}")))),
        }
    }
    Ok((records, None))
}

fn resolved_series(records: &[EpsilonRecord], f: impl Fn(&EpsilonRecord) -> Option<f64>) -> Vec<(f64, f64)> {
    records.iter().filter(|r| r.resolved).filter_map(|r| f(r).map(|v| (r.epsilon, v))).collect()
}

/// Fit and verdict for the estimate ratios; returns the largest ratio.
fn estimate_meters(records: &[EpsilonRecord], fits: &mut Vec<NamedFit>, verdicts: &mut Vec<Verdict>) -> f64 {
    let mut constant: f64 = 0.0;
    for flavor in [EstimateFlavor::Prop31, EstimateFlavor::Prop32] {
        let series = resolved_series(records, |r| {
            r.estimates.iter().find(|e| e.flavor == flavor).map(|e| e.max_ratio)
        });
        if series.is_empty() {
            continue;
        }
        let finite = series.iter().all(|(_, v)| v.is_finite());
        constant = series.iter().map(|(_, v)| *v).fold(constant, f64::max);
        let positive: Vec<(f64, f64)> = series.iter().copied().filter(|(_, v)| *v > 0.0).collect();
        let name = format!("ratio_{}", flavor.name().to_lowercase());
        let (passed, criterion) = match fit_exponent(&positive) {
            Ok(fit) => {
                fits.push(NamedFit { name: name.clone(), fit });
                (
                    finite && fit.slope <= RATIO_SLOPE_TOLERANCE,
                    format!(
                        "max ratio finite and its exponent {:+.4} <= {RATIO_SLOPE_TOLERANCE}",
                        fit.slope
                    ),
                )
            }
            Err(_) => (finite, "max ratio finite (too few positive points for a trend fit)".into()),
        };
        verdicts.push(Verdict { name: format!("{name}_bounded"), passed, criterion, series });
    }
    constant
}

/// Solves the regularized problem for every epsilon in the net and certifies
/// moderateness of the solution seminorm.
pub fn existence_sweep(
    spec: &MassSpec,
    setup: &LabSetup,
    net: &EpsilonNet,
    solver: &SolverConfig,
) -> Result<SweepReport> {
    spec.validate(setup.grid.dim())?;
    let (records, failure) = run_net(net, |eps| {
        let start = Instant::now();
        let grid = Arc::new(resolving_grid(&setup.grid, eps, solver.max_count)?);
        let (u0, u1) = setup.data.sample(&grid)?;
        let m = regularize(spec, eps, &grid, &setup.psi)?;
        let mut meter = Meter::new(setup, m.field(), &u0, &u1)?;
        let (dt, steps) = solve_observed(
            &u0,
            &u1,
            m.field(),
            &setup.op,
            solver.t_final,
            solver.time_step,
            solver.stride,
            &mut |s| meter.observe(s),
        )?;
        Ok(EpsilonRecord {
            epsilon: eps,
            resolved: true,
            unresolved_reason: None,
            counts: grid.counts().to_vec(),
            dt,
            steps,
            seminorm: meter.seminorm,
            difference: None,
            difference_direct: None,
            mass_norms: mass_norms(m.field(), setup.op.nu_s())?,
            energy_drift: meter.drift,
            estimates: meter.estimates(),
            runtime_seconds: start.elapsed().as_secs_f64(),
        })
    })?;

    let mut fits = Vec::new();
    let mut verdicts = Vec::new();
    let series = resolved_series(&records, |r| Some(r.seminorm));
    let (passed, criterion) = match fit_exponent(&series) {
        Ok(fit) => {
            fits.push(NamedFit { name: "seminorm".into(), fit });
            (
                fit.residual <= solver.residual_ceiling,
                format!(
                    "log-log residual {:.3e} <= {} (exponent {:+.4})",
                    fit.residual, solver.residual_ceiling, fit.slope
                ),
            )
        }
        Err(e) => (false, format!("no fit: {e}")),
    };
    verdicts.push(Verdict { name: "c1_moderate".into(), passed: passed && failure.is_none(), criterion, series });
    let estimate_constant = estimate_meters(&records, &mut fits, &mut verdicts);

    Ok(SweepReport {
        experiment: "existence".into(),
        descriptor: descriptor("existence", setup, spec, solver),
        net: net.values().to_vec(),
        k_max: solver.k_max,
        records,
        fits,
        verdicts,
        negligibility: None,
        cross_validation: None,
        floor: None,
        estimate_constant,
        failure,
    })
}

/// Compares the nets `m_eps` and `m_eps + perturbation(eps)`.
///
/// The difference `U = u - u~` solves `U_tt + R^s U + m_eps U = (m~ - m) u~`
/// with zero data. Both routes are run in lockstep: the direct subtraction,
/// and the forced solve driven by the midpoint displacement of `u~`. Because
/// the forcing scales with the perturbation, the forced route carries no
/// cancellation error and its sup is the series certified negligible.
pub fn uniqueness_experiment(
    spec: &MassSpec,
    perturbation: PerturbationKind,
    setup: &LabSetup,
    net: &EpsilonNet,
    solver: &SolverConfig,
) -> Result<SweepReport> {
    spec.validate(setup.grid.dim())?;
    let (records, failure) = run_net(net, |eps| {
        let start = Instant::now();
        let grid = Arc::new(resolving_grid(&setup.grid, eps, solver.max_count)?);
        let (u0, u1) = setup.data.sample(&grid)?;
        let m = regularize(spec, eps, &grid, &setup.psi)?;
        let delta = perturbation.value(eps);
        let m_tilde = m.field().map(|v| v + Complex64::new(delta, 0.0));
        let (dt, steps) = solver.time_step.resolve(&setup.op, &m_tilde, solver.t_final)?;

        let mut plain = Stepper::new(&setup.op, m.field(), &u0, &u1, dt)?;
        let mut perturbed = Stepper::new(&setup.op, &m_tilde, &u0, &u1, dt)?;
        let zero = Field::zeros(grid.clone());
        let mut forced = Stepper::new(&setup.op, m.field(), &zero, &zero, dt)?;
        let mut meter = Meter::new(setup, m.field(), &u0, &u1)?;

        let mut d_duhamel: f64 = 0.0;
        let mut d_direct: f64 = 0.0;
        meter.observe(&plain.state()?)?;
        for n in 1..=steps {
            let mid = perturbed.step_returning_midpoint();
            forced.step_with_source(&(&mid * delta))?;
            plain.step();
            if snapshot_due(n, steps, solver.stride) {
                if !(plain.is_finite() && perturbed.is_finite() && forced.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite solution at step {n}")));
                }
                let state = plain.state()?;
                meter.observe(&state)?;
                d_direct = d_direct.max(lp_norm(&(&state.u - &perturbed.displacement()), 2.0)?);
                d_duhamel = d_duhamel.max(lp_norm(&forced.displacement(), 2.0)?);
            }
        }
        Ok(EpsilonRecord {
            epsilon: eps,
            resolved: true,
            unresolved_reason: None,
            counts: grid.counts().to_vec(),
            dt,
            steps,
            seminorm: meter.seminorm,
            difference: Some(d_duhamel),
            difference_direct: Some(d_direct),
            mass_norms: mass_norms(m.field(), setup.op.nu_s())?,
            energy_drift: meter.drift,
            estimates: meter.estimates(),
            runtime_seconds: start.elapsed().as_secs_f64(),
        })
    })?;

    let mut fits = Vec::new();
    let mut verdicts = Vec::new();
    let series = resolved_series(&records, |r| r.difference);
    let negligibility = negligibility_check(&series, solver.k_max);
    verdicts.push(Verdict {
        name: "negligible".into(),
        passed: negligibility.negligible && failure.is_none() && series.len() >= 3,
        criterion: match negligibility.first_failure() {
            None => format!("D / eps^k nonincreasing over the net tail for every k <= {}", solver.k_max),
            Some(k) => format!("D / eps^{k} not nonincreasing over the net tail"),
        },
        series: series.clone(),
    });

    // Cross-validate at the middle of the resolved net.
    let cross_validation = records
        .iter()
        .filter(|r| r.resolved)
        .nth(series.len() / 2)
        .and_then(|r| Some((r.epsilon, r.difference?, r.difference_direct?)))
        .map(|(epsilon, duhamel, direct)| {
            let scale = duhamel.abs().max(direct.abs());
            let relative_gap = if scale == 0.0 { 0.0 } else { (duhamel - direct).abs() / scale };
            CrossValidation {
                epsilon,
                duhamel,
                direct,
                relative_gap,
                tolerance: CROSS_VALIDATION_TOLERANCE,
                passed: relative_gap <= CROSS_VALIDATION_TOLERANCE,
            }
        });
    if let Some(cv) = &cross_validation {
        verdicts.push(Verdict {
            name: "cross_validated".into(),
            passed: cv.passed,
            criterion: format!(
                "forced and direct differences agree to {:.3e} <= {:.0e} relative at eps = {:.4e}",
                cv.relative_gap, cv.tolerance, cv.epsilon
            ),
            series: vec![(cv.epsilon, cv.duhamel), (cv.epsilon, cv.direct)],
        });
    }
    let estimate_constant = estimate_meters(&records, &mut fits, &mut verdicts);

    let mut desc = descriptor("uniqueness", setup, spec, solver);
    desc["perturbation"] = serde_json::json!(perturbation);
    Ok(SweepReport {
        experiment: "uniqueness".into(),
        descriptor: desc,
        net: net.values().to_vec(),
        k_max: solver.k_max,
        records,
        fits,
        verdicts,
        negligibility: Some(negligibility),
        cross_validation,
        floor: None,
        estimate_constant,
        failure,
    })
}

/// Resolution of the classical reference relative to the working runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyConfig {
    pub spatial_factor: usize,
    pub temporal_factor: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self { spatial_factor: 2, temporal_factor: 4 }
    }
}

/// Monotone decrease allowing one rise at floor level, and a final value
/// within `FLOOR_FACTOR` of the floor.
pub fn converged(series: &[(f64, f64)], floor: f64) -> (bool, String) {
    let level = FLOOR_FACTOR * floor;
    let rises: Vec<usize> = (1..series.len()).filter(|&i| series[i].1 > series[i - 1].1).collect();
    let plateau_ok = rises.len() <= 1 && rises.iter().all(|&i| series[i].1 <= level);
    let last = series.last().map(|p| p.1).unwrap_or(f64::INFINITY);
    let ok = series.len() >= 2 && plateau_ok && last <= level;
    (
        ok,
        format!(
            "C decreasing with {} rise(s) (at most one, at floor level) and final {last:.3e} <= {FLOOR_FACTOR} x floor {floor:.3e}",
            rises.len()
        ),
    )
}

/// Distance of the regularized solutions from the classical one.
///
/// Every epsilon is solved on one working grid (the finest any resolvable
/// epsilon needs) with one time step, so the only thing that changes along
/// the net is `m_eps`. The reference uses the unregularized mass on a finer
/// grid and step; the floor is the working-resolution error of the
/// unregularized solve against it.
pub fn consistency_experiment(
    spec: &MassSpec,
    setup: &LabSetup,
    net: &EpsilonNet,
    solver: &SolverConfig,
    reference: &ConsistencyConfig,
) -> Result<SweepReport> {
    spec.validate(setup.grid.dim())?;
    if !spec.is_bounded() {
        return Err(Error::Config(format!(
            "consistency needs a bounded mass with pointwise values, got {}",
            spec.label()
        )));
    }
    if reference.spatial_factor == 0 || reference.temporal_factor == 0 {
        return Err(Error::Config("reference refinement factors must be positive".into()));
    }

    let mut working: Option<BoxGrid> = None;
    let mut unresolved = Vec::new();
    for &eps in net.values() {
        match resolving_grid(&setup.grid, eps, solver.max_count) {
            Ok(g) => {
                if working.as_ref().is_none_or(|w| g.node_count() > w.node_count()) {
                    working = Some(g);
                }
            }
            Err(Error::Resolution { reason, .. }) => unresolved.push((eps, reason)),
            Err(e) => return Err(e),
        }
    }
    let working = Arc::new(working.ok_or_else(|| Error::Resolution {
        epsilon: net.values()[0],
        reason: "no epsilon in the net is resolvable".into(),
    })?);
    let m_work = spec.sample_unregularized(&working)?;
    let (dt, steps) = solver.time_step.resolve(&setup.op, &m_work, solver.t_final)?;

    // Reference trajectory, restricted to working nodes at snapshot times.
    let fine_grid = Arc::new(working.refined(&vec![reference.spatial_factor; working.dim()])?);
    let (f0, f1) = setup.data.sample(&fine_grid)?;
    let m_fine = spec.sample_unregularized(&fine_grid)?;
    let mut reference_u = Vec::new();
    solve_observed(
        &f0,
        &f1,
        &m_fine,
        &setup.op,
        solver.t_final,
        TimeStep::Fixed(dt / reference.temporal_factor as f64),
        solver.stride * reference.temporal_factor,
        &mut |s| {
            reference_u.push(Field::restrict_from(&s.u, working.clone())?);
            Ok(())
        },
    )
    .map_err(|e| match e {
        Error::Config(_) | Error::Domain(_) => e,
        other => Error::Numerical(format!("reference solve failed: {other}")),
    })?;

    let distance = |mass: &Field| -> Result<(f64, f64, f64, Vec<FlavorMax>)> {
        let (u0, u1) = setup.data.sample(&working)?;
        let mut meter = Meter::new(setup, mass, &u0, &u1)?;
        let mut sup: f64 = 0.0;
        let mut k = 0usize;
        solve_observed(&u0, &u1, mass, &setup.op, solver.t_final, TimeStep::Fixed(dt), solver.stride, &mut |s| {
            meter.observe(s)?;
            let r = reference_u
                .get(k)
                .ok_or_else(|| Error::Invariant("reference has fewer snapshots than the working run".into()))?;
            sup = sup.max(lp_norm(&(&s.u - r), 2.0)?);
            k += 1;
            Ok(())
        })?;
        if k != reference_u.len() {
            return Err(Error::Invariant("reference and working snapshots differ in number".into()));
        }
        Ok((sup, meter.seminorm, meter.drift, meter.estimates()))
    };
    let floor = distance(&m_work)?.0;

    let (mut records, failure) = run_net(net, |eps| {
        if let Some((_, reason)) = unresolved.iter().find(|(e, _)| *e == eps) {
            return Err(Error::Resolution { epsilon: eps, reason: reason.clone() });
        }
        let start = Instant::now();
        let m = regularize(spec, eps, &working, &setup.psi)?;
        let (c, seminorm, drift, estimates) = distance(m.field())?;
        Ok(EpsilonRecord {
            epsilon: eps,
            resolved: true,
            unresolved_reason: None,
            counts: working.counts().to_vec(),
            dt,
            steps,
            seminorm,
            difference: Some(c),
            difference_direct: None,
            mass_norms: mass_norms(m.field(), setup.op.nu_s())?,
            energy_drift: drift,
            estimates,
            runtime_seconds: start.elapsed().as_secs_f64(),
        })
    })?;
    records.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));

    let mut fits = Vec::new();
    let mut verdicts = Vec::new();
    let series = resolved_series(&records, |r| r.difference);
    let (passed, criterion) = converged(&series, floor);
    verdicts.push(Verdict { name: "consistent".into(), passed: passed && failure.is_none(), criterion, series });
    let estimate_constant = estimate_meters(&records, &mut fits, &mut verdicts);

    let mut desc = descriptor("consistency", setup, spec, solver);
    desc["reference"] = serde_json::json!({
        "spatial_factor": reference.spatial_factor,
        "temporal_factor": reference.temporal_factor,
        "working_grid": working.describe(),
        "dt": dt,
    });
    Ok(SweepReport {
        experiment: "consistency".into(),
        descriptor: desc,
        net: net.values().to_vec(),
        k_max: solver.k_max,
        records,
        fits,
        verdicts,
        negligibility: None,
        cross_validation: None,
        floor: Some(floor),
        estimate_constant,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FractionalOperator;
    use crate::experiments::DataPreset;
    use crate::mass::BoundedProfile;
    use crate::spectral::RocklandSymbol;
    use crate::structure::{make_grid, DilationStructure};

    fn setup_1d(s: f64) -> LabSetup {
        let st = DilationStructure::isotropic(1);
        let grid = make_grid(&st, &[20.0], &[128]).unwrap();
        let op = FractionalOperator::new(RocklandSymbol::laplacian(&st).unwrap(), s).unwrap();
        LabSetup::new(grid, op, DataPreset::Gaussian { amplitude: 1.0, width: 1.0, velocity: 0.0, center: None })
            .unwrap()
    }

    fn quick() -> SolverConfig {
        SolverConfig { t_final: 0.5, max_count: 512, ..SolverConfig::default() }
    }

    fn short_net() -> EpsilonNet {
        EpsilonNet::new(0.5, 0.7, 6).unwrap()
    }

    #[test]
    fn zero_mass_seminorm_is_constant() {
        let r = existence_sweep(&MassSpec::Zero, &setup_1d(1.0), &short_net(), &quick()).unwrap();
        let fit = r.fit("seminorm").unwrap();
        assert!(fit.slope.abs() < 1e-6, "{fit:?}");
        assert!(r.verdict("c1_moderate").unwrap().passed);
        assert!(r.failure.is_none());
    }

    #[test]
    fn identical_nets_have_zero_difference() {
        let r = uniqueness_experiment(
            &MassSpec::DiracDelta { weight: 1.0 },
            PerturbationKind::None,
            &setup_1d(1.0),
            &short_net(),
            &quick(),
        )
        .unwrap();
        for rec in r.resolved() {
            assert_eq!(rec.difference, Some(0.0));
            assert_eq!(rec.difference_direct, Some(0.0));
        }
        assert!(r.verdict("negligible").unwrap().passed);
        assert!(r.cross_validation.unwrap().passed);
    }

    #[test]
    fn unresolved_tail_is_flagged() {
        let cfg = SolverConfig { max_count: 128, ..quick() };
        let r = existence_sweep(&MassSpec::DiracDelta { weight: 1.0 }, &setup_1d(1.0), &short_net(), &cfg).unwrap();
        assert!(r.records.iter().any(|x| !x.resolved));
        assert!(r.records[0].resolved);
        assert_eq!(r.records.len(), 6);
    }

    #[test]
    fn zero_mass_consistency_is_exact() {
        let r = consistency_experiment(&MassSpec::Zero, &setup_1d(1.0), &short_net(), &quick(), &Default::default())
            .unwrap();
        assert!(r.floor.unwrap() < 1e-12);
        for rec in r.resolved() {
            assert!(rec.difference.unwrap() < 1e-12);
        }
    }

    #[test]
    fn consistency_rejects_singular_mass() {
        let e = consistency_experiment(
            &MassSpec::DiracDelta { weight: 1.0 },
            &setup_1d(1.0),
            &short_net(),
            &quick(),
            &Default::default(),
        );
        assert!(matches!(e, Err(Error::Config(_))));
    }

    #[test]
    fn plateau_rule() {
        let s = |v: &[f64]| v.iter().enumerate().map(|(i, &x)| (1.0 / (i + 1) as f64, x)).collect::<Vec<_>>();
        assert!(converged(&s(&[1.0, 0.5, 0.1, 0.01]), 0.01).0);
        assert!(converged(&s(&[1.0, 0.5, 0.05, 0.06, 0.05]), 0.01).0);
        assert!(!converged(&s(&[1.0, 0.5, 0.6, 0.05]), 0.01).0);
        assert!(!converged(&s(&[1.0, 0.5, 0.2]), 0.01).0);
        assert!(!converged(&s(&[1.0, 0.05, 0.06, 0.05, 0.06]), 0.01).0);
    }

    #[test]
    fn bounded_bump_runs_consistency() {
        let spec = MassSpec::Bounded(BoundedProfile::Gaussian { amplitude: 1.0, width: 1.0, center: None });
        let r = consistency_experiment(&spec, &setup_1d(1.0), &short_net(), &quick(), &Default::default()).unwrap();
        let series = &r.verdict("consistent").unwrap().series;
        assert_eq!(series.len(), 6);
        assert!(series.last().unwrap().1 < series[0].1, "{}", r.summary());
    }
}
