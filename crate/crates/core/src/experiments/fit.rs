use serde::Serialize;

use crate::error::{Error, Result};

/// Least-squares line `log y = intercept + slope * log(1/eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    /// Fitted exponent `N` in `y ~ eps^{-N}`.
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in natural-log units.
    pub residual: f64,
    pub points: usize,
}

pub const MIN_FIT_POINTS: usize = 5;

pub fn fit_exponent(pairs: &[(f64, f64)]) -> Result<ExponentFit> {
    if pairs.len() < MIN_FIT_POINTS {
        return Err(Error::Domain(format!(
            "exponent fit needs at least {MIN_FIT_POINTS} points, got {}",
            pairs.len()
        )));
    }
    if let Some((e, y)) = pairs.iter().find(|(e, y)| !(*e > 0.0) || !(*y > 0.0) || !y.is_finite()) {
        return Err(Error::Domain(format!("exponent fit needs positive data, got ({e}, {y})")));
    }
    let xs: Vec<f64> = pairs.iter().map(|(e, _)| -e.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, y)| y.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("exponent fit needs distinct epsilons".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(ExponentFit { slope, intercept, residual, points: pairs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Vec<f64> {
        (0..8).map(|i| 0.5 * 0.7f64.powi(i)).collect()
    }

    #[test]
    fn exact_power_law() {
        let pairs: Vec<(f64, f64)> = net().into_iter().map(|e| (e, e.powi(-3))).collect();
        let fit = fit_exponent(&pairs).unwrap();
        assert!((fit.slope - 3.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
    }

    #[test]
    fn constant_series_has_zero_slope() {
        let pairs: Vec<(f64, f64)> = net().into_iter().map(|e| (e, 4.2)).collect();
        let fit = fit_exponent(&pairs).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!((fit.intercept - 4.2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let short: Vec<(f64, f64)> = net().into_iter().take(4).map(|e| (e, 1.0)).collect();
        assert!(fit_exponent(&short).is_err());
        let mut pairs: Vec<(f64, f64)> = net().into_iter().map(|e| (e, 1.0)).collect();
        pairs[2].1 = 0.0;
        assert!(matches!(fit_exponent(&pairs), Err(Error::Domain(_))));
    }
}
