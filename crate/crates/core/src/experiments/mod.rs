//! The epsilon-net harness: moderateness fits, negligibility certificates,
//! and the existence, uniqueness and consistency sweeps.

mod fit;
mod negligibility;
mod sweeps;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{FractionalOperator, TimeStep};
use crate::error::{Error, Result};
use crate::mass::MollifierProfile;
use crate::spectral::Field;
use crate::structure::BoxGrid;

pub use fit::{fit_exponent, ExponentFit, MIN_FIT_POINTS};
pub use negligibility::{negligibility_check, NegligibilityVerdict, OrderMargin, DEFAULT_K_MAX};
pub use sweeps::{
    consistency_experiment, existence_sweep, uniqueness_experiment, ConsistencyConfig, EpsilonRecord, NamedFit,
    SweepReport, Verdict,
};

/// Geometric net `eps_i = eps0 * rho^i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonNet {
    values: Vec<f64>,
}

impl EpsilonNet {
    pub fn new(eps0: f64, rho: f64, n: usize) -> Result<Self> {
        if !(eps0 > 0.0 && eps0 <= 1.0) {
            return Err(Error::Config(format!("eps0 must lie in (0, 1], got {eps0}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Config(format!("net ratio must lie in (0, 1), got {rho}")));
        }
        if n < MIN_FIT_POINTS {
            return Err(Error::Config(format!("net needs at least {MIN_FIT_POINTS} points, got {n}")));
        }
        Ok(Self { values: (0..n).map(|i| eps0 * rho.powi(i as i32)).collect() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for EpsilonNet {
    /// `eps0 = 0.5`, `rho = 2^{-1/2}`, twelve points.
    fn default() -> Self {
        Self::new(0.5, std::f64::consts::FRAC_1_SQRT_2, 12).expect("default net is valid")
    }
}

/// Closed-form initial data `(u0, u1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum DataPreset {
    /// `u0 = amplitude exp(-|x - c|^2 / (2 width^2))`, `u1 = velocity * u0 / amplitude`.
    Gaussian {
        #[serde(default = "one")]
        amplitude: f64,
        width: f64,
        #[serde(default)]
        velocity: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// `u0 = e^{i xi_k . x}`, `u1 = 0`.
    PlaneWave { mode: Vec<i64> },
    /// Real trigonometric polynomial with random coefficients on the lowest
    /// quarter of the spectrum, zero mean; `u1 = 0`.
    RandomBandlimited { seed: u64 },
}

fn one() -> f64 {
    1.0
}

/// Threshold for the decay of localized data at the box boundary.
pub const BOUNDARY_DECAY: f64 = 1e-10;

impl DataPreset {
    pub fn sample(&self, grid: &Arc<BoxGrid>) -> Result<(Field, Field)> {
        match self {
            DataPreset::Gaussian { amplitude, width, velocity, center } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("gaussian data needs a positive width".into()));
                }
                let shape = |x: &[f64]| {
                    let r2: f64 = match center {
                        Some(c) => x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum(),
                        None => x.iter().map(|a| a * a).sum(),
                    };
                    (-r2 / (2.0 * width * width)).exp()
                };
                let u0 = Field::from_real_fn(grid.clone(), |x| amplitude * shape(x));
                let u1 = Field::from_real_fn(grid.clone(), |x| velocity * shape(x));
                let decay = boundary_max(&u0).max(boundary_max(&u1));
                if decay > BOUNDARY_DECAY {
                    return Err(Error::Config(format!(
                        "initial data reaches {decay:e} at the box boundary (limit {BOUNDARY_DECAY:e}); enlarge the box"
                    )));
                }
                Ok((u0, u1))
            }
            DataPreset::PlaneWave { mode } => {
                if mode.len() != grid.dim() {
                    return Err(Error::Config("plane wave mode has wrong dimension".into()));
                }
                grid.spectral_index(mode).map_err(|e| Error::Config(e.to_string()))?;
                Ok((Field::plane_wave(grid.clone(), mode), Field::zeros(grid.clone())))
            }
            DataPreset::RandomBandlimited { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let limits: Vec<i64> = grid.counts().iter().map(|&n| (n / 8).max(1) as i64).collect();
                let mut modes: Vec<(Vec<i64>, f64, f64)> = Vec::new();
                let mut k = vec![0i64; grid.dim()];
                loop {
                    if k.iter().any(|&v| v != 0) {
                        modes.push((k.clone(), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                    }
                    // odometer over -limit..=limit on each axis
                    let mut j = 0;
                    loop {
                        if j == k.len() {
                            break;
                        }
                        if k[j] < limits[j] {
                            k[j] += 1;
                            break;
                        }
                        k[j] = -limits[j];
                        j += 1;
                    }
                    if j == k.len() {
                        break;
                    }
                    if k.iter().zip(&limits).all(|(a, l)| *a == -l) {
                        break;
                    }
                }
                let extents = grid.extents().to_vec();
                let u0 = Field::from_real_fn(grid.clone(), |x| {
                    modes
                        .iter()
                        .map(|(k, a, b)| {
                            let phase: f64 = x
                                .iter()
                                .zip(k)
                                .zip(&extents)
                                .map(|((xi, &kj), l)| xi * 2.0 * std::f64::consts::PI * kj as f64 / l)
                                .sum();
                            a * phase.cos() + b * phase.sin()
                        })
                        .sum()
                });
                Ok((u0, Field::zeros(grid.clone())))
            }
        }
    }
}

/// Largest magnitude on the faces of the box (nodes with some index 0).
pub fn boundary_max(f: &Field) -> f64 {
    let g = f.grid();
    f.values()
        .iter()
        .enumerate()
        .filter(|(i, _)| g.multi_index(*i).contains(&0))
        .map(|(_, v)| v.norm())
        .fold(0.0, f64::max)
}

/// Time-stepping parameters shared by every run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub t_final: f64,
    pub time_step: TimeStep,
    pub stride: usize,
    /// Node cap per axis for automatic refinement.
    pub max_count: usize,
    /// Residual ceiling for the "moderate" verdict.
    pub residual_ceiling: f64,
    pub k_max: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            time_step: TimeStep::Auto,
            stride: 10,
            max_count: 4096,
            residual_ceiling: crate::mass::MODERATE_RESIDUAL_CEILING,
            k_max: DEFAULT_K_MAX,
        }
    }
}

/// Everything about a problem except the mass and the net.
#[derive(Debug, Clone)]
pub struct LabSetup {
    pub grid: Arc<BoxGrid>,
    pub op: FractionalOperator,
    pub psi: MollifierProfile,
    pub data: DataPreset,
}

impl LabSetup {
    pub fn new(grid: BoxGrid, op: FractionalOperator, data: DataPreset) -> Result<Self> {
        if op.symbol().structure() != grid.structure() {
            return Err(Error::Config("operator and grid use different dilation structures".into()));
        }
        let psi = MollifierProfile::new(grid.dim());
        Ok(Self { grid: Arc::new(grid), op, psi, data })
    }

    /// `Q > nu s`, the condition for the critical-Lebesgue estimate.
    pub fn subcritical(&self) -> bool {
        self.grid.structure().q() > self.op.nu_s()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{make_grid, DilationStructure};

    #[test]
    fn default_net() {
        let net = EpsilonNet::default();
        assert_eq!(net.len(), 12);
        assert_eq!(net.values()[0], 0.5);
        assert!(net.values().windows(2).all(|w| w[1] < w[0]));
        assert!((net.values()[2] - 0.25).abs() < 1e-15);
        assert!(EpsilonNet::new(1.5, 0.5, 6).is_err());
        assert!(EpsilonNet::new(0.5, 1.0, 6).is_err());
        assert!(EpsilonNet::new(0.5, 0.5, 4).is_err());
    }

    #[test]
    fn presets_sample() {
        let g = Arc::new(make_grid(&DilationStructure::isotropic(2), &[20.0, 20.0], &[32, 32]).unwrap());
        let (u0, u1) = DataPreset::Gaussian { amplitude: 1.0, width: 1.0, velocity: 0.5, center: None }
            .sample(&g)
            .unwrap();
        assert_eq!(u0.values()[g.origin_index()].re, 1.0);
        assert_eq!(u1.values()[g.origin_index()].re, 0.5);

        let tight = Arc::new(make_grid(&DilationStructure::isotropic(1), &[4.0], &[32]).unwrap());
        assert!(matches!(
            DataPreset::Gaussian { amplitude: 1.0, width: 1.0, velocity: 0.0, center: None }.sample(&tight),
            Err(Error::Config(_))
        ));

        let (r0, r1) = DataPreset::RandomBandlimited { seed: 7 }.sample(&g).unwrap();
        assert!(r0.is_real(0.0));
        assert_eq!(r1.max_abs(), 0.0);
        let again = DataPreset::RandomBandlimited { seed: 7 }.sample(&g).unwrap().0;
        assert_eq!(r0.values(), again.values());
        // spectrum confined to |k_j| <= N_j/8
        let spec = crate::spectral::forward(&r0);
        for (i, c) in spec.coefficients().iter().enumerate() {
            let k: Vec<i64> = g.multi_index(i).iter().map(|&j| BoxGrid::integer_frequency(j, 32)).collect();
            if k.iter().any(|v| v.abs() > 4) || k.iter().all(|&v| v == 0) {
                assert!(c.norm() < 1e-12);
            }
        }
    }
}
