//! Anisotropic dilations on `R^d` and the periodic box that stands in for it.
//!
//! A [`DilationStructure`] carries the weights `v_1..v_d` of the dilation
//! `D_r(x) = (r^{v_1} x_1, ..., r^{v_d} x_d)` and its homogeneous dimension
//! `Q = v_1 + ... + v_d`. Weights are exact rationals so that homogeneity
//! checks of the form `2 m_j v_j = nu` are equalities, not float comparisons.
//!
//! A [`BoxGrid`] is the periodic, origin-centred sampling of a box
//! `[-L_1/2, L_1/2) x ... x [-L_d/2, L_d/2)` together with its frequency
//! lattice `xi_{k,j} = 2 pi k_j / L_j`.

use num_rational::Rational64;

use crate::error::{Error, Result};

/// Rational to float.
pub(crate) fn ratio_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DilationStructure {
    weights: Vec<Rational64>,
}

impl DilationStructure {
    pub fn new(weights: Vec<Rational64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("dilation structure needs at least one weight".into()));
        }
        if let Some(w) = weights.iter().find(|w| **w <= Rational64::from_integer(0)) {
            return Err(Error::Config(format!("dilation weight {w} must be positive")));
        }
        Ok(Self { weights })
    }

    /// Integer weights, the common case.
    pub fn from_integers(weights: &[i64]) -> Result<Self> {
        Self::new(weights.iter().map(|&w| Rational64::from_integer(w)).collect())
    }

    /// All weights equal to one: the Euclidean dilation on `R^d`.
    pub fn isotropic(dim: usize) -> Self {
        Self { weights: vec![Rational64::from_integer(1); dim] }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Rational64] {
        &self.weights
    }

    pub fn weights_f64(&self) -> Vec<f64> {
        self.weights.iter().copied().map(ratio_f64).collect()
    }

    /// `Q = sum v_i`, exact.
    pub fn homogeneous_dimension(&self) -> Rational64 {
        self.weights.iter().copied().sum()
    }

    /// `Q` as a float.
    pub fn q(&self) -> f64 {
        ratio_f64(self.homogeneous_dimension())
    }

    /// `D_r(x)`.
    pub fn dilate(&self, x: &[f64], r: f64) -> Result<Vec<f64>> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Domain(format!("dilation factor must be positive, got {r}")));
        }
        if x.len() != self.dim() {
            return Err(Error::Domain(format!(
                "point has {} coordinates, structure has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(x.iter()
            .zip(self.weights_f64())
            .map(|(xi, v)| r.powf(v) * xi)
            .collect())
    }
}

/// Free function form of [`DilationStructure::homogeneous_dimension`].
pub fn homogeneous_dimension(structure: &DilationStructure) -> Rational64 {
    structure.homogeneous_dimension()
}

/// Periodic origin-centred grid.
///
/// Nodes are stored row-major (last axis fastest). Node `k` on axis `j` sits
/// at `(k - N_j/2) h_j`, so the origin is the node with every `k_j = N_j/2`.
/// Spectral coefficients use FFT ordering: index `i < N_j/2` carries the
/// integer frequency `i`, the rest carry `i - N_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGrid {
    structure: DilationStructure,
    extents: Vec<f64>,
    counts: Vec<usize>,
}

impl BoxGrid {
    pub fn new(structure: DilationStructure, extents: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let d = structure.dim();
        if extents.len() != d || counts.len() != d {
            return Err(Error::Config(format!(
                "grid needs {d} extents and {d} counts, got {} and {}",
                extents.len(),
                counts.len()
            )));
        }
        for (j, &l) in extents.iter().enumerate() {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::Config(format!("extent L_{} = {l} must be positive", j + 1)));
            }
        }
        for (j, &n) in counts.iter().enumerate() {
            if n < 4 || n % 2 != 0 {
                return Err(Error::Config(format!(
                    "node count N_{} = {n} must be even and at least 4",
                    j + 1
                )));
            }
        }
        Ok(Self { structure, extents, counts })
    }

    pub fn structure(&self) -> &DilationStructure {
        &self.structure
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.extents.iter().zip(&self.counts).map(|(l, &n)| l / n as f64).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacings().iter().product()
    }

    /// Total volume of the box.
    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    pub fn node_count(&self) -> usize {
        self.counts.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dim()];
        for j in (0..self.dim().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * self.counts[j + 1];
        }
        strides
    }

    /// Multi-index of a flat node index.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for j in (0..self.dim()).rev() {
            idx[j] = flat % self.counts[j];
            flat /= self.counts[j];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.strides()).map(|(k, s)| k * s).sum()
    }

    /// Flat index of the origin node.
    pub fn origin_index(&self) -> usize {
        let idx: Vec<usize> = self.counts.iter().map(|n| n / 2).collect();
        self.flat_index(&idx)
    }

    /// Coordinates of a node.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        let h = self.spacings();
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(j, &k)| (k as f64 - (self.counts[j] / 2) as f64) * h[j])
            .collect()
    }

    /// Coordinates of every node along axis `j`.
    pub fn axis_nodes(&self, j: usize) -> Vec<f64> {
        let h = self.extents[j] / self.counts[j] as f64;
        let half = (self.counts[j] / 2) as f64;
        (0..self.counts[j]).map(|k| (k as f64 - half) * h).collect()
    }

    /// Integer frequency carried by FFT index `i` on an axis with `n` nodes.
    pub fn integer_frequency(i: usize, n: usize) -> i64 {
        if i < n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Angular frequencies `2 pi k / L_j` along axis `j`, FFT ordered.
    pub fn axis_frequencies(&self, j: usize) -> Vec<f64> {
        let n = self.counts[j];
        let scale = 2.0 * std::f64::consts::PI / self.extents[j];
        (0..n).map(|i| scale * Self::integer_frequency(i, n) as f64).collect()
    }

    /// Frequency vector `xi` at flat spectral index.
    pub fn frequency(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                2.0 * std::f64::consts::PI / self.extents[j]
                    * Self::integer_frequency(i, self.counts[j]) as f64
            })
            .collect()
    }

    /// Flat spectral index of an integer frequency vector `k` (each entry in
    /// `-N_j/2 .. N_j/2 - 1`).
    pub fn spectral_index(&self, k: &[i64]) -> Result<usize> {
        if k.len() != self.dim() {
            return Err(Error::Domain("frequency vector has wrong dimension".into()));
        }
        let mut idx = Vec::with_capacity(k.len());
        for (j, &kj) in k.iter().enumerate() {
            let n = self.counts[j] as i64;
            if kj < -n / 2 || kj >= n / 2 {
                return Err(Error::Domain(format!("frequency {kj} outside lattice on axis {j}")));
            }
            idx.push(kj.rem_euclid(n) as usize);
        }
        Ok(self.flat_index(&idx))
    }

    /// Same box, counts multiplied per axis.
    pub fn refined(&self, factors: &[usize]) -> Result<Self> {
        let counts = self.counts.iter().zip(factors).map(|(n, f)| n * f).collect();
        Self::new(self.structure.clone(), self.extents.clone(), counts)
    }

    /// Short human-readable description used in dump headers.
    pub fn describe(&self) -> String {
        let weights: Vec<String> = self.structure.weights().iter().map(|w| w.to_string()).collect();
        format!(
            "dim={} weights=[{}] extents={:?} counts={:?}",
            self.dim(),
            weights.join(","),
            self.extents,
            self.counts
        )
    }
}

/// Builds a grid; same as [`BoxGrid::new`].
pub fn make_grid(structure: &DilationStructure, extents: &[f64], counts: &[usize]) -> Result<BoxGrid> {
    BoxGrid::new(structure.clone(), extents.to_vec(), counts.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn dilate_examples() {
        let s = DilationStructure::from_integers(&[1, 2]).unwrap();
        assert_eq!(s.dilate(&[1.0, 1.0], 2.0).unwrap(), vec![2.0, 4.0]);
        assert_eq!(s.dilate(&[0.3, -1.7], 1.0).unwrap(), vec![0.3, -1.7]);
        let iso = DilationStructure::isotropic(3);
        assert_eq!(iso.dilate(&[1.0, 0.0, -2.0], 3.0).unwrap(), vec![3.0, 0.0, -6.0]);
    }

    #[test]
    fn dilate_rejects_nonpositive_factor() {
        let s = DilationStructure::isotropic(2);
        assert!(matches!(s.dilate(&[1.0, 1.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(s.dilate(&[1.0, 1.0], -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn homogeneous_dimension_sums_weights() {
        let q = |w: &[i64]| homogeneous_dimension(&DilationStructure::from_integers(w).unwrap());
        assert_eq!(q(&[1, 1]), Rational64::from_integer(2));
        assert_eq!(q(&[1, 2]), Rational64::from_integer(3));
        assert_eq!(q(&[1, 1, 2, 3]), Rational64::from_integer(7));
        let half = DilationStructure::new(vec![Rational64::new(1, 2), Rational64::new(3, 2)]).unwrap();
        assert_eq!(half.homogeneous_dimension(), Rational64::from_integer(2));
        assert_eq!(DilationStructure::isotropic(5).q(), 5.0);
    }

    #[test]
    fn weights_must_be_positive() {
        assert!(DilationStructure::from_integers(&[1, 0]).is_err());
        assert!(DilationStructure::new(vec![]).is_err());
    }

    #[test]
    fn grid_examples() {
        let s = DilationStructure::isotropic(1);
        let g = make_grid(&s, &[2.0 * PI], &[8]).unwrap();
        assert!((g.spacings()[0] - PI / 4.0).abs() < 1e-15);
        let ks: Vec<i64> = (0..8).map(|i| BoxGrid::integer_frequency(i, 8)).collect();
        let mut sorted = ks.clone();
        sorted.sort();
        assert_eq!(sorted, (-4..4).collect::<Vec<_>>());
        assert_eq!(g.frequency(0), vec![0.0]);

        let g2 = make_grid(&DilationStructure::isotropic(2), &[1.0, 1.0], &[4, 4]).unwrap();
        assert!((g2.cell_volume() - 1.0 / 16.0).abs() < 1e-15);
        assert_eq!(g2.node_count(), 16);

        assert!(matches!(make_grid(&s, &[2.0 * PI], &[7]), Err(Error::Config(_))));
        assert!(matches!(make_grid(&s, &[2.0 * PI], &[2]), Err(Error::Config(_))));
        assert!(matches!(make_grid(&s, &[-1.0], &[8]), Err(Error::Config(_))));
    }

    #[test]
    fn origin_is_a_node() {
        let g = make_grid(&DilationStructure::from_integers(&[1, 2]).unwrap(), &[3.0, 5.0], &[6, 10]).unwrap();
        let o = g.origin_index();
        assert_eq!(g.node(o), vec![0.0, 0.0]);
        assert_eq!(g.flat_index(&g.multi_index(37)), 37);
        assert_eq!(g.spectral_index(&[0, 0]).unwrap(), 0);
        let i = g.spectral_index(&[-1, 2]).unwrap();
        let xi = g.frequency(i);
        assert!((xi[0] + 2.0 * PI / 3.0).abs() < 1e-14);
        assert!((xi[1] - 4.0 * PI / 5.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn dilation_is_a_group_action(
            r in 0.05f64..20.0, s in 0.05f64..20.0,
            x in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let d = DilationStructure::new(vec![
                Rational64::from_integer(1), Rational64::new(3, 2), Rational64::from_integer(2),
            ]).unwrap();
            let lhs = d.dilate(&x, r * s).unwrap();
            let rhs = d.dilate(&d.dilate(&x, s).unwrap(), r).unwrap();
            for (a, b) in lhs.iter().zip(&rhs) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300) + 1e-300);
            }
            let back = d.dilate(&d.dilate(&x, r).unwrap(), 1.0 / r).unwrap();
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
