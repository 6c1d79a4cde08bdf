//! Masses, Friedrichs mollifiers and their anisotropic dilates.
//!
//! A [`MassSpec`] names a (possibly singular) nonnegative mass; [`regularize`]
//! turns it into a grid field `m_eps` using the dilated mollifier
//! `psi_eps(x) = eps^{-Q} psi(D_{1/eps} x)`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{fit_exponent, ExponentFit};
use crate::spectral::{convolve, Field};
use crate::structure::BoxGrid;

/// Nodes per axis that the support of `psi_eps` must span.
pub const MIN_NODES_ACROSS_SUPPORT: f64 = 4.0;

/// Negative nodal values above `-NEGATIVITY_TOLERANCE * max(1, |m|_inf)` are
/// convolution round-off and get clamped to zero.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-12;

fn unit_sphere_area(dim: usize) -> f64 {
    // |S^{d-1}| = 2 pi^{d/2} / Gamma(d/2), Gamma at half-integers by recursion.
    let half = dim as f64 / 2.0;
    let mut gamma = if dim % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut x = if dim % 2 == 0 { 1.0 } else { 0.5 };
    while x < half {
        gamma *= x;
        x += 1.0;
    }
    2.0 * std::f64::consts::PI.powf(half) / gamma
}

fn bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// `psi = c exp(-1/(1 - |x|^2))` on the unit ball, normalized to unit mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierProfile {
    dim: usize,
    normalization: f64,
}

impl MollifierProfile {
    /// Computes the normalization by a radial midpoint rule. The integrand is
    /// flat to all orders at `r = 1`, so the rule converges very fast.
    pub fn new(dim: usize) -> Self {
        const PANELS: usize = 200_000;
        let h = 1.0 / PANELS as f64;
        let radial: f64 = (0..PANELS)
            .map(|i| {
                let r = (i as f64 + 0.5) * h;
                bump(r * r) * r.powi(dim as i32 - 1)
            })
            .sum::<f64>()
            * h;
        Self { dim, normalization: 1.0 / (unit_sphere_area(dim) * radial) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        self.normalization * bump(r2)
    }

    /// `sup psi = c / e`.
    pub fn sup(&self) -> f64 {
        self.normalization * (-1.0f64).exp()
    }
}

/// Checks that `psi_eps` fits in the box and spans enough nodes per axis.
pub fn check_resolution(grid: &BoxGrid, epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    let weights = grid.structure().weights_f64();
    for (j, ((l, h), v)) in grid.extents().iter().zip(grid.spacings()).zip(weights).enumerate() {
        let radius = epsilon.powf(v);
        if radius >= l / 2.0 {
            return Err(Error::Resolution {
                epsilon,
                reason: format!("support radius {radius} exceeds half box length on axis {}", j + 1),
            });
        }
        if 2.0 * radius / h < MIN_NODES_ACROSS_SUPPORT {
            return Err(Error::Resolution {
                epsilon,
                reason: format!(
                    "support spans {:.2} nodes on axis {} (need {MIN_NODES_ACROSS_SUPPORT})",
                    2.0 * radius / h,
                    j + 1
                ),
            });
        }
    }
    Ok(())
}

/// Smallest power-of-two refinement of `grid` that resolves `psi_eps`, or a
/// resolution error once some axis would exceed `max_count` nodes.
pub fn resolving_grid(grid: &BoxGrid, epsilon: f64, max_count: usize) -> Result<BoxGrid> {
    let weights = grid.structure().weights_f64();
    let mut factors = vec![1usize; grid.dim()];
    for j in 0..grid.dim() {
        let radius = epsilon.powf(weights[j]);
        if radius >= grid.extents()[j] / 2.0 {
            return Err(Error::Resolution {
                epsilon,
                reason: format!("support radius {radius} exceeds half box length on axis {}", j + 1),
            });
        }
        while 2.0 * radius * (grid.counts()[j] * factors[j]) as f64 / grid.extents()[j]
            < MIN_NODES_ACROSS_SUPPORT
        {
            factors[j] *= 2;
            if grid.counts()[j] * factors[j] > max_count {
                return Err(Error::Resolution {
                    epsilon,
                    reason: format!("axis {} would need more than {max_count} nodes", j + 1),
                });
            }
        }
    }
    grid.refined(&factors)
}

/// Samples `psi_eps` on the grid.
pub fn mollifier_scale(psi: &MollifierProfile, epsilon: f64, grid: &Arc<BoxGrid>) -> Result<Field> {
    check_resolution(grid, epsilon)?;
    if psi.dim() != grid.dim() {
        return Err(Error::GridMismatch("mollifier dimension differs from grid".into()));
    }
    let weights = grid.structure().weights_f64();
    let radii: Vec<f64> = weights.iter().map(|&v| epsilon.powf(v)).collect();
    let amplitude = epsilon.powf(-grid.structure().q());
    Ok(Field::from_real_fn(grid.clone(), |x| {
        let y: Vec<f64> = x.iter().zip(&radii).map(|(a, r)| a / r).collect();
        amplitude * psi.eval(&y)
    }))
}

/// `psi_eps` rescaled to unit discrete mass. On coarse grids the Riemann sum
/// of `psi_eps` misses 1 by up to a few percent; convolving with the
/// renormalized kernel keeps `m * psi_eps -> m` free of that bias.
pub fn unit_mass_kernel(psi: &MollifierProfile, epsilon: f64, grid: &Arc<BoxGrid>) -> Result<Field> {
    let phi = mollifier_scale(psi, epsilon, grid)?;
    let mass = lp_norm(&phi, 1.0)?;
    Ok(&phi * (1.0 / mass))
}

/// Discrete `L^p` norm `(cell_volume * sum |f|^p)^{1/p}`, max for `p = inf`.
pub fn lp_norm(f: &Field, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("L^p norm needs p >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.max_abs());
    }
    let dv = f.grid().cell_volume();
    if p == 2.0 {
        return Ok((dv * f.values().iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt());
    }
    let sum: f64 = f.values().iter().map(|v| v.norm().powf(p)).sum();
    Ok((dv * sum).powf(1.0 / p))
}

/// Closed-form bounded masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum BoundedProfile {
    /// `amplitude * exp(-|x - center|^2 / (2 width^2))`; continuous, vanishing at infinity.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    Constant { value: f64 },
    /// `amplitude` on the Euclidean ball of the given radius.
    Indicator { amplitude: f64, radius: f64 },
    /// `amplitude * (1 + cos(xi_k . x))`, band-limited.
    Cosine { amplitude: f64, mode: Vec<i64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    /// Bounded and measurable.
    LInf,
    /// Continuous and vanishing at infinity.
    C0,
}

impl BoundedProfile {
    pub fn regularity(&self) -> Regularity {
        match self {
            BoundedProfile::Gaussian { .. } => Regularity::C0,
            _ => Regularity::LInf,
        }
    }

    pub fn eval(&self, x: &[f64], grid: &BoxGrid) -> f64 {
        match self {
            BoundedProfile::Gaussian { amplitude, width, center } => {
                let r2: f64 = match center {
                    Some(c) => x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum(),
                    None => x.iter().map(|a| a * a).sum(),
                };
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            BoundedProfile::Constant { value } => *value,
            BoundedProfile::Indicator { amplitude, radius } => {
                let r2: f64 = x.iter().map(|a| a * a).sum();
                if r2 <= radius * radius {
                    *amplitude
                } else {
                    0.0
                }
            }
            BoundedProfile::Cosine { amplitude, mode } => {
                let phase: f64 = x
                    .iter()
                    .zip(mode)
                    .zip(grid.extents())
                    .map(|((a, &k), l)| a * 2.0 * std::f64::consts::PI * k as f64 / l)
                    .sum();
                amplitude * (1.0 + phase.cos())
            }
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let ok = match self {
            BoundedProfile::Gaussian { amplitude, width, center } => {
                *amplitude >= 0.0 && *width > 0.0 && center.as_ref().map_or(true, |c| c.len() == dim)
            }
            BoundedProfile::Constant { value } => *value >= 0.0,
            BoundedProfile::Indicator { amplitude, radius } => *amplitude >= 0.0 && *radius > 0.0,
            BoundedProfile::Cosine { amplitude, mode } => *amplitude >= 0.0 && mode.len() == dim,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid bounded mass profile {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Adds the constant `exp(-1/eps)`.
    #[default]
    ExpInverseEpsilon,
    /// No perturbation: both nets coincide.
    None,
}

impl PerturbationKind {
    pub fn value(&self, epsilon: f64) -> f64 {
        match self {
            PerturbationKind::ExpInverseEpsilon => (-1.0 / epsilon).exp(),
            PerturbationKind::None => 0.0,
        }
    }
}

/// Symbolic description of the mass coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MassSpec {
    Zero,
    Bounded(BoundedProfile),
    /// `weight * delta` at the origin.
    DiracDelta { weight: f64 },
    /// Realized as `psi_eps^2`.
    DeltaSquared,
    /// `|x|^{-exponent}`, capped at `cap_radius^{-exponent}` inside the cap radius.
    InversePower { exponent: f64, cap_radius: f64 },
    Perturbed {
        base: Box<MassSpec>,
        #[serde(default)]
        perturbation: PerturbationKind,
    },
}

impl MassSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            MassSpec::Zero | MassSpec::DeltaSquared => Ok(()),
            MassSpec::Bounded(p) => p.validate(dim),
            MassSpec::DiracDelta { weight } if *weight >= 0.0 => Ok(()),
            MassSpec::DiracDelta { weight } => {
                Err(Error::Config(format!("delta weight {weight} must be nonnegative")))
            }
            MassSpec::InversePower { exponent, cap_radius } if *exponent > 0.0 && *cap_radius > 0.0 => Ok(()),
            MassSpec::InversePower { .. } => {
                Err(Error::Config("inverse power needs positive exponent and cap radius".into()))
            }
            MassSpec::Perturbed { base, .. } => base.validate(dim),
        }
    }

    /// Whether the mass is a genuine function, so that an unregularized
    /// classical solve is meaningful.
    pub fn is_bounded(&self) -> bool {
        matches!(self, MassSpec::Zero | MassSpec::Bounded(_))
    }

    /// Samples a bounded mass directly (no mollification).
    pub fn sample_unregularized(&self, grid: &Arc<BoxGrid>) -> Result<Field> {
        match self {
            MassSpec::Zero => Ok(Field::zeros(grid.clone())),
            MassSpec::Bounded(p) => Ok(Field::from_real_fn(grid.clone(), |x| p.eval(x, grid))),
            other => Err(Error::Config(format!("{other:?} has no pointwise values"))),
        }
    }

    /// Local integrability of `|x|^{-gamma p}` near the origin, the condition
    /// for the capped regularizations to stay bounded in `L^p` as the cap shrinks.
    pub fn inverse_power_admissible(&self, p: f64, dim: usize) -> bool {
        match self {
            MassSpec::InversePower { exponent, .. } => p.is_finite() && exponent * p < dim as f64,
            _ => true,
        }
    }

    pub fn label(&self) -> String {
        match self {
            MassSpec::Zero => "zero".into(),
            MassSpec::Bounded(BoundedProfile::Gaussian { .. }) => "gaussian_bump".into(),
            MassSpec::Bounded(BoundedProfile::Constant { .. }) => "constant".into(),
            MassSpec::Bounded(BoundedProfile::Indicator { .. }) => "indicator".into(),
            MassSpec::Bounded(BoundedProfile::Cosine { .. }) => "cosine".into(),
            MassSpec::DiracDelta { .. } => "dirac_delta".into(),
            MassSpec::DeltaSquared => "delta_squared".into(),
            MassSpec::InversePower { .. } => "inverse_power".into(),
            MassSpec::Perturbed { base, .. } => format!("perturbed_{}", base.label()),
        }
    }
}

/// `m_eps` on a grid.
#[derive(Debug, Clone)]
pub struct RegularizedMass {
    spec: MassSpec,
    epsilon: f64,
    field: Field,
    /// Exact value of an additive perturbation included in `field`, if any.
    perturbation: f64,
    /// Ceiling applied to inverse-power masses before convolution.
    cap: Option<f64>,
}

impl RegularizedMass {
    /// Wraps an already sampled nonnegative mass, clamping round-off negatives.
    pub fn from_field(spec: MassSpec, epsilon: f64, field: Field) -> Result<Self> {
        let field = clamp_nonnegative(field)?;
        Ok(Self { spec, epsilon, field, perturbation: 0.0, cap: None })
    }

    pub fn spec(&self) -> &MassSpec {
        &self.spec
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn grid(&self) -> &Arc<BoxGrid> {
        self.field.grid()
    }

    pub fn perturbation(&self) -> f64 {
        self.perturbation
    }

    pub fn cap(&self) -> Option<f64> {
        self.cap
    }

    pub fn norm(&self, p: f64) -> Result<f64> {
        lp_norm(&self.field, p)
    }

    pub fn sup(&self) -> f64 {
        self.field.max_abs()
    }

    /// `||m_eps||_{L^p}` for `p` in `{1, Q/(nu s), 2Q/(nu s), inf}`, keyed by a label.
    pub fn recorded_norms(&self, nu_s: f64) -> Result<Vec<(String, f64, f64)>> {
        let q = self.grid().structure().q();
        let mut out = Vec::new();
        for (label, p) in [
            ("1", 1.0),
            ("Q/(nu s)", q / nu_s),
            ("2Q/(nu s)", 2.0 * q / nu_s),
            ("inf", f64::INFINITY),
        ] {
            if p >= 1.0 {
                out.push((label.to_string(), p, self.norm(p)?));
            }
        }
        Ok(out)
    }
}

fn clamp_nonnegative(mut field: Field) -> Result<Field> {
    let scale = field.max_abs().max(1.0);
    for v in field.values_mut() {
        if v.re < 0.0 {
            if v.re < -NEGATIVITY_TOLERANCE * scale {
                return Err(Error::Invariant(format!("regularized mass takes negative value {}", v.re)));
            }
            v.re = 0.0;
        }
        v.im = 0.0;
    }
    Ok(field)
}

/// Builds `m_eps` for a mass spec.
pub fn regularize(
    spec: &MassSpec,
    epsilon: f64,
    grid: &Arc<BoxGrid>,
    psi: &MollifierProfile,
) -> Result<RegularizedMass> {
    spec.validate(grid.dim())?;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    let mut cap = None;
    let mut perturbation = 0.0;
    let field = match spec {
        MassSpec::Zero => Field::zeros(grid.clone()),
        MassSpec::Bounded(p) => {
            let m = Field::from_real_fn(grid.clone(), |x| p.eval(x, grid));
            convolve(&m, &unit_mass_kernel(psi, epsilon, grid)?)?
        }
        MassSpec::DiracDelta { weight } => &unit_mass_kernel(psi, epsilon, grid)? * *weight,
        MassSpec::DeltaSquared => {
            let phi = mollifier_scale(psi, epsilon, grid)?;
            phi.map(|v| v * v)
        }
        MassSpec::InversePower { exponent, cap_radius } => {
            let ceiling = cap_radius.powf(-exponent);
            cap = Some(ceiling);
            let m = Field::from_real_fn(grid.clone(), |x| {
                let r: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                if r <= *cap_radius {
                    ceiling
                } else {
                    r.powf(-exponent)
                }
            });
            convolve(&m, &unit_mass_kernel(psi, epsilon, grid)?)?
        }
        MassSpec::Perturbed { base, perturbation: kind } => {
            let inner = regularize(base, epsilon, grid, psi)?;
            perturbation = kind.value(epsilon);
            cap = inner.cap;
            inner.field.map(|v| v + Complex64::new(perturbation, 0.0))
        }
    };
    let field = clamp_nonnegative(field)?;
    Ok(RegularizedMass { spec: spec.clone(), epsilon, field, perturbation, cap })
}

/// Outcome of fitting `||m_eps||_{L^p} ~ eps^{-N}` over a net.
#[derive(Debug, Clone, Serialize)]
pub struct ModeratenessWitness {
    pub p: f64,
    pub epsilons: Vec<f64>,
    pub norms: Vec<f64>,
    pub fit: ExponentFit,
    pub residual_ceiling: f64,
    pub moderate: bool,
}

/// Default ceiling on the RMS log-log residual for a "moderate" verdict.
pub const MODERATE_RESIDUAL_CEILING: f64 = 0.1;

pub fn moderateness_witness(
    spec: &MassSpec,
    p: f64,
    net: &[f64],
    grid: &Arc<BoxGrid>,
    psi: &MollifierProfile,
) -> Result<ModeratenessWitness> {
    if net.len() < 5 {
        return Err(Error::Config(format!("moderateness fit needs at least 5 epsilons, got {}", net.len())));
    }
    let mut norms = Vec::with_capacity(net.len());
    for &eps in net {
        check_resolution(grid, eps)?;
        norms.push(regularize(spec, eps, grid, psi)?.norm(p)?);
    }
    let pairs: Vec<(f64, f64)> = net.iter().copied().zip(norms.iter().copied()).collect();
    let fit = fit_exponent(&pairs)?;
    let moderate = fit.residual <= MODERATE_RESIDUAL_CEILING;
    Ok(ModeratenessWitness {
        p,
        epsilons: net.to_vec(),
        norms,
        fit,
        residual_ceiling: MODERATE_RESIDUAL_CEILING,
        moderate,
    })
}

/// One row of a mollifier norm table.
#[derive(Debug, Clone, Serialize)]
pub struct NormRow {
    pub epsilon: f64,
    pub p: f64,
    pub norm: f64,
    pub resolved: bool,
}

/// `||m_eps||_{L^p}` over a net, with unresolved epsilons kept as flagged rows.
pub fn norm_table(
    spec: &MassSpec,
    ps: &[f64],
    net: &[f64],
    grid: &Arc<BoxGrid>,
    psi: &MollifierProfile,
) -> Result<Vec<NormRow>> {
    let mut rows = Vec::new();
    for &eps in net {
        match check_resolution(grid, eps) {
            Ok(()) => {
                let m = regularize(spec, eps, grid, psi)?;
                for &p in ps {
                    rows.push(NormRow { epsilon: eps, p, norm: m.norm(p)?, resolved: true });
                }
            }
            Err(Error::Resolution { .. }) => {
                rows.extend(ps.iter().map(|&p| NormRow { epsilon: eps, p, norm: f64::NAN, resolved: false }));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

pub fn write_norm_table(rows: &[NormRow], path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epsilon", "p", "norm", "resolved_flag"])?;
    for r in rows {
        w.write_record([
            format!("{:.12e}", r.epsilon),
            if r.p.is_infinite() { "inf".to_string() } else { format!("{}", r.p) },
            format!("{:.12e}", r.norm),
            r.resolved.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{make_grid, DilationStructure};

    fn grid(weights: &[i64], extents: &[f64], counts: &[usize]) -> Arc<BoxGrid> {
        Arc::new(make_grid(&DilationStructure::from_integers(weights).unwrap(), extents, counts).unwrap())
    }

    #[test]
    fn normalization_matches_brute_force_quadrature() {
        // Tensor midpoint rule on [-1,1]^d, independent of the radial route.
        for dim in 1..=2usize {
            let n = if dim == 1 { 200_000 } else { 2000 };
            let h = 2.0 / n as f64;
            let total: f64 = if dim == 1 {
                (0..n).map(|i| bump((-1.0 + (i as f64 + 0.5) * h).powi(2))).sum::<f64>() * h
            } else {
                let mut s = 0.0;
                for i in 0..n {
                    let x = -1.0 + (i as f64 + 0.5) * h;
                    for j in 0..n {
                        let y = -1.0 + (j as f64 + 0.5) * h;
                        s += bump(x * x + y * y);
                    }
                }
                s * h * h
            };
            let psi = MollifierProfile::new(dim);
            assert!((psi.normalization() * total - 1.0).abs() < 1e-8, "dim {dim}");
        }
        // 1D integral of exp(-1/(1-x^2)) is 0.443993816168...
        assert!((MollifierProfile::new(1).normalization() - 1.0 / 0.443_993_816_168_079_4).abs() < 1e-9);
    }

    #[test]
    fn mollifier_unit_mass_and_scaling() {
        let g = grid(&[1, 2], &[3.0, 3.0], &[256, 256]);
        let psi = MollifierProfile::new(2);
        let one = mollifier_scale(&psi, 1.0, &g).unwrap();
        let direct = Field::from_real_fn(g.clone(), |x| psi.eval(x));
        assert!((&one - &direct).max_abs() < 1e-15);
        for eps in [1.0, 0.7, 0.5] {
            let m = mollifier_scale(&psi, eps, &g).unwrap();
            assert!((lp_norm(&m, 1.0).unwrap() - 1.0).abs() < 2e-6, "eps {eps}");
            let expected = eps.powf(-3.0) * psi.sup();
            assert!((lp_norm(&m, f64::INFINITY).unwrap() - expected).abs() < 1e-12 * expected);
            assert!(m.values().iter().all(|v| v.re >= 0.0));
        }
    }

    #[test]
    fn resolution_guard() {
        let g = grid(&[1], &[4.0], &[32]);
        let psi = MollifierProfile::new(1);
        assert!(mollifier_scale(&psi, 0.5, &g).is_ok());
        assert!(matches!(mollifier_scale(&psi, 0.2, &g), Err(Error::Resolution { .. })));
        let small = grid(&[1], &[1.5], &[64]);
        assert!(matches!(mollifier_scale(&psi, 1.0, &small), Err(Error::Resolution { .. })));
        let refined = resolving_grid(&g, 0.05, 1 << 12).unwrap();
        assert_eq!(refined.counts(), &[256]);
        assert!(check_resolution(&refined, 0.05).is_ok());
        assert!(matches!(resolving_grid(&g, 0.001, 1024), Err(Error::Resolution { .. })));
    }

    #[test]
    fn lp_norm_examples() {
        let g = grid(&[1, 1], &[2.0, 3.0], &[8, 8]);
        let c = Field::constant(g.clone(), Complex64::new(-1.5, 0.0));
        assert!((lp_norm(&c, 2.0).unwrap() - 1.5 * 6f64.sqrt()).abs() < 1e-13);
        assert!((lp_norm(&c, 3.0).unwrap() - 1.5 * 6f64.powf(1.0 / 3.0)).abs() < 1e-13);
        assert_eq!(lp_norm(&c, f64::INFINITY).unwrap(), 1.5);
        assert!(matches!(lp_norm(&c, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn regularize_examples() {
        let g = grid(&[1], &[8.0], &[512]);
        let psi = MollifierProfile::new(1);
        let eps = 0.3;
        let phi = mollifier_scale(&psi, eps, &g).unwrap();

        let delta = regularize(&MassSpec::DiracDelta { weight: 1.0 }, eps, &g, &psi).unwrap();
        assert!((delta.field() - &phi).max_abs() < 2e-6 * phi.max_abs());
        assert!((delta.norm(1.0).unwrap() - 1.0).abs() < 1e-14);
        let weighted = regularize(&MassSpec::DiracDelta { weight: 2.5 }, eps, &g, &psi).unwrap();
        assert!((weighted.norm(1.0).unwrap() - 2.5).abs() < 1e-13);

        let sq = regularize(&MassSpec::DeltaSquared, eps, &g, &psi).unwrap();
        let expected = eps.powi(-2) * psi.sup().powi(2);
        assert!((sq.sup() - expected).abs() < 1e-12 * expected);

        let spec = MassSpec::Perturbed { base: Box::new(MassSpec::DiracDelta { weight: 1.0 }), perturbation: PerturbationKind::default() };
        let pert = regularize(&spec, eps, &g, &psi).unwrap();
        let diff = pert.field() - delta.field();
        let e = (-1.0 / eps).exp();
        assert_eq!(pert.perturbation(), e);
        for v in diff.values() {
            assert!((v.re - e).abs() <= 1e-15 * (1.0 + phi.max_abs()));
        }

        let zero = regularize(&MassSpec::Zero, eps, &g, &psi).unwrap();
        assert_eq!(zero.sup(), 0.0);
        assert!(matches!(regularize(&MassSpec::Zero, 1.5, &g, &psi), Err(Error::Domain(_))));
    }

    #[test]
    fn bounded_masses_stay_nonnegative_and_converge() {
        let g = grid(&[1], &[20.0], &[1024]);
        let psi = MollifierProfile::new(1);
        let profile = BoundedProfile::Gaussian { amplitude: 2.0, width: 1.0, center: None };
        let exact = Field::from_real_fn(g.clone(), |x| profile.eval(x, &g));
        let spec = MassSpec::Bounded(profile);
        let mut last = f64::INFINITY;
        for eps in [0.8, 0.4, 0.2, 0.1] {
            let m = regularize(&spec, eps, &g, &psi).unwrap();
            assert!(m.field().values().iter().all(|v| v.re >= 0.0));
            let err = (m.field() - &exact).max_abs();
            assert!(err < last, "eps {eps}: {err} vs {last}");
            last = err;
        }
    }

    #[test]
    fn inverse_power_is_capped() {
        let g = grid(&[1, 1], &[6.0, 6.0], &[64, 64]);
        let psi = MollifierProfile::new(2);
        let spec = MassSpec::InversePower { exponent: 1.0, cap_radius: 0.05 };
        let m = regularize(&spec, 0.5, &g, &psi).unwrap();
        assert_eq!(m.cap(), Some(20.0));
        assert!(m.sup() <= 20.0 + 1e-9);
        assert!(spec.inverse_power_admissible(1.5, 2));
        assert!(!spec.inverse_power_admissible(2.0, 2));
    }

    #[test]
    fn clamp_rejects_genuinely_negative_masses() {
        let g = grid(&[1], &[4.0], &[16]);
        let mut f = Field::zeros(g.clone());
        f.values_mut()[3] = Complex64::new(-1e-14, 0.0);
        let ok = RegularizedMass::from_field(MassSpec::Zero, 1.0, f.clone()).unwrap();
        assert_eq!(ok.field().values()[3].re, 0.0);
        f.values_mut()[3] = Complex64::new(-1e-6, 0.0);
        assert!(matches!(RegularizedMass::from_field(MassSpec::Zero, 1.0, f), Err(Error::Invariant(_))));
    }

    #[test]
    fn delta_moderateness_exponents() {
        let g = grid(&[1], &[4.0], &[4096]);
        let psi = MollifierProfile::new(1);
        let net: Vec<f64> = (0..6).map(|i| 0.8 * 0.7f64.powi(i)).collect();
        let spec = MassSpec::DiracDelta { weight: 1.0 };
        let inf = moderateness_witness(&spec, f64::INFINITY, &net, &g, &psi).unwrap();
        assert!((inf.fit.slope - 1.0).abs() < 0.01);
        assert!(inf.moderate);
        let l1 = moderateness_witness(&spec, 1.0, &net, &g, &psi).unwrap();
        assert!(l1.fit.slope.abs() < 0.01);
        // Continuum law Q(1 - 1/p), evaluated independently by quadrature.
        let l3 = moderateness_witness(&spec, 3.0, &net, &g, &psi).unwrap();
        assert!((l3.fit.slope - 2.0 / 3.0).abs() < 0.02 * 2.0 / 3.0);
    }

    #[test]
    fn mass_spec_parses_from_toml() {
        let spec: MassSpec = toml::from_str("kind = \"dirac_delta\"\nweight = 1.0").unwrap();
        assert_eq!(spec, MassSpec::DiracDelta { weight: 1.0 });
        let spec: MassSpec =
            toml::from_str("kind = \"perturbed\"\n[base]\nkind = \"bounded\"\nprofile = \"gaussian\"\namplitude = 1.0\nwidth = 0.5")
                .unwrap();
        match spec {
            MassSpec::Perturbed { base, perturbation } => {
                assert_eq!(perturbation, PerturbationKind::ExpInverseEpsilon);
                assert_eq!(base.label(), "gaussian_bump");
            }
            other => panic!("{other:?}"),
        }
    }
}
