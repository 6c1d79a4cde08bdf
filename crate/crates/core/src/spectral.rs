//! Fields on a [`BoxGrid`], the unitary discrete Fourier transform, diagonal
//! Rockland symbols and their fractional powers, and spectral convolution.
//!
//! The transform is unitary: `sum |f|^2 = sum |F|^2` with no volume factor.
//! Quadrature weights (`cell_volume`) are applied by the norm code, so the
//! continuum `L^2` norm is `sqrt(cell_volume * sum |F|^2)` on either side.

use std::collections::HashMap;
use std::io::Write;
use std::ops::{Add, Mul, Sub};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use num_rational::Rational64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::structure::{ratio_f64, BoxGrid, DilationStructure};

type PlanKey = (usize, bool);

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut plans = plans.lock().expect("fft plan cache poisoned");
    plans
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

/// In-place unitary d-dimensional DFT of row-major data.
fn fft_nd(data: &mut [Complex64], counts: &[usize], inverse: bool) {
    let total: usize = counts.iter().product();
    debug_assert_eq!(data.len(), total);
    let d = counts.len();
    let mut stride = 1;
    for j in (0..d).rev() {
        let n = counts[j];
        let fft = plan(n, inverse);
        if stride == 1 {
            fft.process(data);
        } else {
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let block = n * stride;
            for outer in 0..total / block {
                for inner in 0..stride {
                    let base = outer * block + inner;
                    for (k, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + k * stride];
                    }
                    fft.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
        }
        stride *= n;
    }
    let scale = 1.0 / (total as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Complex scalar field sampled at the nodes of a grid.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<BoxGrid>,
    values: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: Arc<BoxGrid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid with {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Numerical("field contains non-finite values".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<BoxGrid>) -> Self {
        let n = grid.node_count();
        Self { grid, values: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn constant(grid: Arc<BoxGrid>, c: Complex64) -> Self {
        let n = grid.node_count();
        Self { grid, values: vec![c; n] }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: Arc<BoxGrid>, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.node_count()).map(|i| f(&grid.node(i))).collect();
        Self { grid, values }
    }

    pub fn from_real_fn(grid: Arc<BoxGrid>, f: impl Fn(&[f64]) -> f64) -> Self {
        Self::from_fn(grid, |x| Complex64::new(f(x), 0.0))
    }

    /// Plane wave `e^{i xi_k . x}` for an integer frequency vector `k`.
    pub fn plane_wave(grid: Arc<BoxGrid>, k: &[i64]) -> Self {
        let xi: Vec<f64> = k
            .iter()
            .zip(grid.extents())
            .map(|(&kj, l)| 2.0 * std::f64::consts::PI * kj as f64 / l)
            .collect();
        Self::from_fn(grid, |x| {
            let phase: f64 = x.iter().zip(&xi).map(|(a, b)| a * b).sum();
            Complex64::from_polar(1.0, phase)
        })
    }

    pub fn grid(&self) -> &Arc<BoxGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    /// Imaginary parts below `rel_tol` of the largest magnitude.
    pub fn is_real(&self, rel_tol: f64) -> bool {
        self.max_imag() <= rel_tol * self.max_abs()
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{} vs {}",
                self.grid.describe(),
                other.grid.describe()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Field {
        Field { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise product.
    pub fn pointwise_mul(&self, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Field) -> Result<()> {
        self.check_same_grid(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Field resampled on a grid whose counts are integer multiples of ours,
    /// picking the coincident nodes. Used to compare runs at two resolutions.
    pub fn restrict_from(fine: &Field, coarse: Arc<BoxGrid>) -> Result<Field> {
        let fg = fine.grid();
        if fg.extents() != coarse.extents() || fg.dim() != coarse.dim() {
            return Err(Error::GridMismatch("restriction needs the same box".into()));
        }
        let mut factors = Vec::with_capacity(coarse.dim());
        for (nf, nc) in fg.counts().iter().zip(coarse.counts()) {
            if nf % nc != 0 {
                return Err(Error::GridMismatch(format!("fine count {nf} not a multiple of {nc}")));
            }
            factors.push(nf / nc);
        }
        let values = (0..coarse.node_count())
            .map(|i| {
                let idx: Vec<usize> = coarse.multi_index(i).iter().zip(&factors).map(|(k, f)| k * f).collect();
                fine.values[fg.flat_index(&idx)]
            })
            .collect();
        Ok(Field { grid: coarse, values })
    }

    /// Node-ordered CSV dump with a header line naming the grid.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "# {}", self.grid.describe())?;
        let d = self.grid.dim();
        let mut header: Vec<String> = vec!["index".into()];
        header.extend((1..=d).map(|j| format!("x{j}")));
        header.push("re".into());
        header.push("im".into());
        writeln!(file, "{}", header.join(","))?;
        for (i, v) in self.values.iter().enumerate() {
            let x = self.grid.node(i);
            let coords: Vec<String> = x.iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(file, "{},{},{:.17e},{:.17e}", i, coords.join(","), v.re, v.im)?;
        }
        Ok(())
    }
}

impl Add<&Field> for &Field {
    type Output = Field;

    fn add(self, rhs: &Field) -> Field {
        assert!(self.check_same_grid(rhs).is_ok(), "adding fields on different grids");
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub<&Field> for &Field {
    type Output = Field;

    fn sub(self, rhs: &Field) -> Field {
        assert!(self.check_same_grid(rhs).is_ok(), "subtracting fields on different grids");
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &Field {
    type Output = Field;

    fn mul(self, rhs: f64) -> Field {
        self.map(|v| v * rhs)
    }
}

/// Discrete Fourier coefficients of a [`Field`], FFT ordered.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: Arc<BoxGrid>,
    coefficients: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: Arc<BoxGrid>, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.len() != grid.node_count() {
            return Err(Error::GridMismatch("coefficient count does not match grid".into()));
        }
        Ok(Self { grid, coefficients })
    }

    pub fn grid(&self) -> &Arc<BoxGrid> {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coefficients
    }

    /// Coefficient at integer frequency `k`.
    pub fn at(&self, k: &[i64]) -> Result<Complex64> {
        Ok(self.coefficients[self.grid.spectral_index(k)?])
    }

    /// `sum |F_k|^2`; times `cell_volume` this is the squared `L^2` norm.
    pub fn energy_sum(&self) -> f64 {
        self.coefficients.iter().map(|c| c.norm_sqr()).sum()
    }
}

pub fn forward(f: &Field) -> SpectralField {
    let mut coefficients = f.values.clone();
    fft_nd(&mut coefficients, f.grid.counts(), false);
    SpectralField { grid: f.grid.clone(), coefficients }
}

pub fn inverse(spec: &SpectralField) -> Field {
    let mut values = spec.coefficients.clone();
    fft_nd(&mut values, spec.grid.counts(), true);
    Field { grid: spec.grid.clone(), values }
}

/// In-place transforms on raw buffers, for the time steppers.
pub(crate) fn forward_in_place(data: &mut [Complex64], grid: &BoxGrid) {
    fft_nd(data, grid.counts(), false);
}

pub(crate) fn inverse_in_place(data: &mut [Complex64], grid: &BoxGrid) {
    fft_nd(data, grid.counts(), true);
}

/// Diagonal homogeneous symbol `a(xi) = sum_j xi_j^{2 m_j}` of degree `nu`
/// with respect to the dilation weights: `2 m_j v_j = nu` for every `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocklandSymbol {
    exponents: Vec<u32>,
    structure: DilationStructure,
    degree: Rational64,
}

impl RocklandSymbol {
    pub fn new(structure: &DilationStructure, exponents: &[u32]) -> Result<Self> {
        if exponents.len() != structure.dim() {
            return Err(Error::Config(format!(
                "symbol needs {} exponents, got {}",
                structure.dim(),
                exponents.len()
            )));
        }
        if exponents.iter().any(|&m| m == 0) {
            return Err(Error::Config("symbol exponents must be positive integers".into()));
        }
        let degrees: Vec<Rational64> = exponents
            .iter()
            .zip(structure.weights())
            .map(|(&m, &v)| Rational64::from_integer(2 * m as i64) * v)
            .collect();
        let degree = degrees[0];
        if let Some(j) = degrees.iter().position(|&nu| nu != degree) {
            return Err(Error::Config(format!(
                "symbol is not homogeneous: 2 m_1 v_1 = {degree} but 2 m_{} v_{} = {}",
                j + 1,
                j + 1,
                degrees[j]
            )));
        }
        Ok(Self { exponents: exponents.to_vec(), structure: structure.clone(), degree })
    }

    /// `|xi|^2`, requires isotropic weights.
    pub fn laplacian(structure: &DilationStructure) -> Result<Self> {
        Self::new(structure, &vec![1; structure.dim()])
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn structure(&self) -> &DilationStructure {
        &self.structure
    }

    /// Homogeneous degree `nu`, exact.
    pub fn degree(&self) -> Rational64 {
        self.degree
    }

    pub fn nu(&self) -> f64 {
        ratio_f64(self.degree)
    }

    pub fn eval(&self, xi: &[f64]) -> f64 {
        xi.iter()
            .zip(&self.exponents)
            .map(|(x, &m)| x.powi(2 * m as i32))
            .sum()
    }

    /// `a(xi)` at every spectral index of the grid, FFT ordered.
    pub fn on_grid(&self, grid: &BoxGrid) -> Vec<f64> {
        let axes: Vec<Vec<f64>> = (0..grid.dim())
            .map(|j| {
                let m = self.exponents[j] as i32;
                grid.axis_frequencies(j).iter().map(|x| x.powi(2 * m)).collect()
            })
            .collect();
        (0..grid.node_count())
            .map(|i| {
                grid.multi_index(i)
                    .iter()
                    .enumerate()
                    .map(|(j, &k)| axes[j][k])
                    .sum()
            })
            .collect()
    }

    /// `a(xi)^sigma` on the grid, with the zero mode set to zero.
    pub fn power_on_grid(&self, grid: &BoxGrid, sigma: f64) -> Vec<f64> {
        self.on_grid(grid)
            .into_iter()
            .map(|a| if a == 0.0 { 0.0 } else { a.powf(sigma) })
            .collect()
    }
}

pub fn symbol_eval(symbol: &RocklandSymbol, xi: &[f64]) -> f64 {
    symbol.eval(xi)
}

/// `R^sigma f`, realized as the multiplier `a(xi)^sigma`.
///
/// `sigma = 0` returns `f` unchanged; the zero mode is annihilated for any
/// `sigma > 0`.
pub fn apply_power(symbol: &RocklandSymbol, sigma: f64, f: &Field) -> Result<Field> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::Domain(format!("fractional power must be nonnegative, got {sigma}")));
    }
    if symbol.structure() != f.grid().structure() {
        return Err(Error::GridMismatch("symbol and field use different dilation structures".into()));
    }
    if sigma == 0.0 {
        return Ok(f.clone());
    }
    let mut spec = forward(f);
    for (c, m) in spec.coefficients.iter_mut().zip(symbol.power_on_grid(f.grid(), sigma)) {
        *c *= m;
    }
    Ok(inverse(&spec))
}

/// Periodic convolution `(f * g)(x) = cell_volume * sum_y f(y) g(x - y)`.
pub fn convolve(f: &Field, g: &Field) -> Result<Field> {
    f.check_same_grid(g)?;
    let grid = f.grid().clone();
    let fs = forward(f);
    let gs = forward(g);
    // node k sits at (k - N/2) h, so x - y lands on index k - l + N/2: the
    // plain circular convolution shifted by half a period on every axis.
    let scale = grid.cell_volume() * (grid.node_count() as f64).sqrt();
    let coefficients = fs
        .coefficients
        .iter()
        .zip(&gs.coefficients)
        .enumerate()
        .map(|(i, (a, b))| {
            let parity: usize = grid.multi_index(i).iter().sum();
            let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
            a * b * (sign * scale)
        })
        .collect();
    Ok(inverse(&SpectralField { grid, coefficients }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::make_grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid1(l: f64, n: usize) -> Arc<BoxGrid> {
        Arc::new(make_grid(&DilationStructure::isotropic(1), &[l], &[n]).unwrap())
    }

    fn random_field(grid: Arc<BoxGrid>, rng: &mut ChaCha8Rng) -> Field {
        let n = grid.node_count();
        let values = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        Field::new(grid, values).unwrap()
    }

    /// Unitary DFT by direct summation over node coordinates; the phase
    /// convention differs from the FFT by a per-frequency unimodular factor.
    fn direct_dft(f: &Field) -> Vec<Complex64> {
        let g = f.grid();
        let n = g.node_count();
        (0..n)
            .map(|k| {
                let xi = g.frequency(k);
                let s: Complex64 = (0..n)
                    .map(|i| {
                        let x = g.node(i);
                        let phase: f64 = x.iter().zip(&xi).map(|(a, b)| a * b).sum();
                        f.values()[i] * Complex64::from_polar(1.0, -phase)
                    })
                    .sum();
                s / (n as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn transform_matches_direct_summation_up_to_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Arc::new(
            make_grid(&DilationStructure::from_integers(&[1, 2]).unwrap(), &[3.0, 2.0], &[8, 6]).unwrap(),
        );
        let f = random_field(g.clone(), &mut rng);
        let fast = forward(&f);
        let slow = direct_dft(&f);
        for (i, (a, b)) in fast.coefficients().iter().zip(&slow).enumerate() {
            // x_0 = -L/2 shifts phases by e^{i xi L/2} = (-1)^k per axis.
            let parity: i64 = g
                .multi_index(i)
                .iter()
                .zip(g.counts())
                .map(|(&k, &n)| BoxGrid::integer_frequency(k, n))
                .sum();
            let sign = if parity.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            assert!((a - b * sign).norm() < 1e-12, "mode {i}: {a} vs {b}");
        }
    }

    #[test]
    fn constant_field_has_only_dc() {
        let g = grid1(2.0 * PI, 16);
        let spec = forward(&Field::constant(g.clone(), Complex64::new(1.0, 0.0)));
        assert!((spec.coefficients()[0] - Complex64::new(4.0, 0.0)).norm() < 1e-13);
        assert!(spec.coefficients()[1..].iter().all(|c| c.norm() < 1e-13));
    }

    #[test]
    fn plane_wave_is_a_single_mode() {
        let g = Arc::new(make_grid(&DilationStructure::isotropic(2), &[2.0, 3.0], &[8, 8]).unwrap());
        let spec = forward(&Field::plane_wave(g.clone(), &[2, -3]));
        let idx = g.spectral_index(&[2, -3]).unwrap();
        for (i, c) in spec.coefficients().iter().enumerate() {
            if i == idx {
                assert!((c.norm() - 8.0).abs() < 1e-12);
            } else {
                assert!(c.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn symbol_examples() {
        let iso = DilationStructure::isotropic(2);
        let lap = RocklandSymbol::laplacian(&iso).unwrap();
        assert_eq!(symbol_eval(&lap, &[3.0, 4.0]), 25.0);
        assert_eq!(symbol_eval(&lap, &[0.0, 0.0]), 0.0);

        let aniso = DilationStructure::from_integers(&[1, 2]).unwrap();
        let a = RocklandSymbol::new(&aniso, &[2, 1]).unwrap();
        assert_eq!(a.degree(), Rational64::from_integer(4));
        let dilated = aniso.dilate(&[1.0, 1.0], 2.0).unwrap();
        assert_eq!(symbol_eval(&a, &dilated), 32.0);
        assert_eq!(2f64.powi(4) * symbol_eval(&a, &[1.0, 1.0]), 32.0);
    }

    #[test]
    fn inhomogeneous_symbol_is_rejected() {
        let aniso = DilationStructure::from_integers(&[1, 2]).unwrap();
        assert!(matches!(RocklandSymbol::new(&aniso, &[1, 1]), Err(Error::Config(_))));
        assert!(RocklandSymbol::laplacian(&aniso).is_err());
    }

    #[test]
    fn apply_power_examples() {
        let g = grid1(2.0 * PI, 16);
        let lap = RocklandSymbol::laplacian(g.structure()).unwrap();
        let e1 = Field::plane_wave(g.clone(), &[1]);
        let out = apply_power(&lap, 0.37, &e1).unwrap();
        assert!((&out - &e1).max_abs() < 1e-13);

        let e2 = Field::plane_wave(g.clone(), &[2]);
        let out = apply_power(&lap, 0.5, &e2).unwrap();
        assert!((&out - &(&e2 * 2.0)).max_abs() < 1e-13);

        assert!(matches!(apply_power(&lap, -0.1, &e2), Err(Error::Domain(_))));
        let same = apply_power(&lap, 0.0, &e2).unwrap();
        assert_eq!(same.values(), e2.values());
    }

    #[test]
    fn apply_power_matches_dense_multiplier() {
        // Dense operator K = F^* diag(a^sigma) F assembled column by column
        // from the direct-summation DFT.
        let g = Arc::new(
            make_grid(&DilationStructure::from_integers(&[1, 2]).unwrap(), &[2.0, 1.5], &[6, 4]).unwrap(),
        );
        let sym = RocklandSymbol::new(g.structure(), &[2, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_field(g.clone(), &mut rng);
        let n = g.node_count();
        let sigma = 0.7;
        let dense = |i: usize, j: usize| -> Complex64 {
            (0..n)
                .map(|k| {
                    let xi = g.frequency(k);
                    let a = sym.eval(&xi);
                    let m = if a == 0.0 { 0.0 } else { a.powf(sigma) };
                    let phase: f64 = g.node(i).iter().zip(g.node(j)).zip(&xi).map(|((x, y), w)| (x - y) * w).sum();
                    Complex64::from_polar(m, phase)
                })
                .sum::<Complex64>()
                / n as f64
        };
        let expected: Vec<Complex64> =
            (0..n).map(|i| (0..n).map(|j| dense(i, j) * f.values()[j]).sum()).collect();
        let got = apply_power(&sym, sigma, &f).unwrap();
        let scale = expected.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in got.values().iter().zip(&expected) {
            assert!((a - b).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn convolution_examples() {
        let g = grid1(4.0, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_field(g.clone(), &mut rng);
        let mut delta = Field::zeros(g.clone());
        delta.values_mut()[g.origin_index()] = Complex64::new(1.0 / g.cell_volume(), 0.0);
        let out = convolve(&f, &delta).unwrap();
        assert!((&out - &f).max_abs() < 1e-12);

        let c1 = Field::constant(g.clone(), Complex64::new(2.0, 0.0));
        let c2 = Field::constant(g.clone(), Complex64::new(-1.5, 0.0));
        let out = convolve(&c1, &c2).unwrap();
        for v in out.values() {
            assert!((v - Complex64::new(-3.0 * 4.0, 0.0)).norm() < 1e-12);
        }
    }

    /// `(f * g)(x_k) = h * sum_l f_l g(x_k - x_l)` with periodic wrap.
    fn direct_convolution(f: &Field, g: &Field) -> Vec<Complex64> {
        let grid = f.grid();
        let n = grid.node_count();
        let counts = grid.counts();
        (0..n)
            .map(|k| {
                let ki = grid.multi_index(k);
                let s: Complex64 = (0..n)
                    .map(|l| {
                        let li = grid.multi_index(l);
                        let idx: Vec<usize> = ki
                            .iter()
                            .zip(&li)
                            .zip(counts)
                            .map(|((a, b), &nn)| (a + nn + nn / 2 - b) % nn)
                            .collect();
                        f.values()[l] * g.values()[grid.flat_index(&idx)]
                    })
                    .sum();
                s * grid.cell_volume()
            })
            .collect()
    }

    #[test]
    fn box_convolution_is_a_triangle() {
        let g = grid1(8.0, 16);
        let bx = Field::from_real_fn(g.clone(), |x| if x[0].abs() <= 1.0 { 1.0 } else { 0.0 });
        let out = convolve(&bx, &bx).unwrap();
        let oracle = direct_convolution(&bx, &bx);
        for (a, b) in out.values().iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-12);
        }
        // Peak at the origin: 5 overlapping nodes, h = 0.5.
        assert!((out.values()[g.origin_index()].re - 2.5).abs() < 1e-12);
        // Linear decay away from the origin.
        let o = g.origin_index();
        let v: Vec<f64> = (0..5).map(|j| out.values()[o + j].re).collect();
        for w in v.windows(3) {
            assert!(((w[0] - w[1]) - (w[1] - w[2])).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_convolution_matches_direct_sum_2d() {
        let g = Arc::new(make_grid(&DilationStructure::isotropic(2), &[3.0, 2.0], &[6, 8]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = random_field(g.clone(), &mut rng);
        let h = random_field(g.clone(), &mut rng);
        let out = convolve(&f, &h).unwrap();
        let oracle = direct_convolution(&f, &h);
        let scale = oracle.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in out.values().iter().zip(&oracle) {
            assert!((a - b).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = Field::zeros(grid1(1.0, 8));
        let b = Field::zeros(grid1(1.0, 16));
        assert!(matches!(convolve(&a, &b), Err(Error::GridMismatch(_))));
        assert!(matches!(Field::new(grid1(1.0, 8), vec![Complex64::new(0.0, 0.0); 3]), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn real_even_symbol_preserves_realness() {
        let g = Arc::new(make_grid(&DilationStructure::from_integers(&[1, 2]).unwrap(), &[4.0, 4.0], &[16, 8]).unwrap());
        let sym = RocklandSymbol::new(g.structure(), &[2, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let vals: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = Field::new(g, vals.iter().map(|&v| Complex64::new(v, 0.0)).collect()).unwrap();
        let out = apply_power(&sym, 0.63, &f).unwrap();
        assert!(out.is_real(1e-12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn round_trip_and_parseval(seed in any::<u64>(), n0 in 2usize..6, n1 in 2usize..5) {
            let g = Arc::new(make_grid(&DilationStructure::isotropic(2), &[1.3, 2.1], &[2 * n0, 2 * n1]).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(g.clone(), &mut rng);
            let spec = forward(&f);
            let back = inverse(&spec);
            let scale = f.max_abs();
            prop_assert!((&back - &f).max_abs() <= 1e-12 * scale);
            let lhs: f64 = f.values().iter().map(|v| v.norm_sqr()).sum();
            prop_assert!((lhs - spec.energy_sum()).abs() <= 1e-12 * lhs);
        }

        #[test]
        fn power_semigroup(seed in any::<u64>(), s1 in 0.05f64..1.5, s2 in 0.05f64..1.5) {
            let g = grid1(2.0 * PI, 32);
            let sym = RocklandSymbol::laplacian(g.structure()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_field(g, &mut rng);
            let twice = apply_power(&sym, s1, &apply_power(&sym, s2, &f).unwrap()).unwrap();
            let once = apply_power(&sym, s1 + s2, &f).unwrap();
            prop_assert!((&twice - &once).max_abs() <= 1e-10 * once.max_abs().max(1.0));
        }

        #[test]
        fn symbol_is_homogeneous(r in 0.1f64..10.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
            let d = DilationStructure::from_integers(&[1, 2]).unwrap();
            let a = RocklandSymbol::new(&d, &[2, 1]).unwrap();
            let lhs = a.eval(&d.dilate(&[x, y], r).unwrap());
            let rhs = r.powf(a.nu()) * a.eval(&[x, y]);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-300));
            prop_assert!(a.eval(&[x, y]) >= 0.0);
        }
    }
}
