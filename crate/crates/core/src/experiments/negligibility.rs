use serde::Serialize;

/// Per-order outcome of the negligibility test.
#[derive(Debug, Clone, Serialize)]
pub struct OrderMargin {
    pub k: u32,
    /// `value_i / eps_i^k` over the whole net.
    pub ratios: Vec<f64>,
    /// Index where the monotone tail starts.
    pub tail_start: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NegligibilityVerdict {
    pub negligible: bool,
    pub k_max: u32,
    pub margins: Vec<OrderMargin>,
}

impl NegligibilityVerdict {
    /// First order that failed, if any.
    pub fn first_failure(&self) -> Option<u32> {
        self.margins.iter().find(|m| !m.passed).map(|m| m.k)
    }
}

/// Default highest order checked.
pub const DEFAULT_K_MAX: u32 = 10;

/// Relative slack when comparing consecutive ratios.
const TIE_SLACK: f64 = 1e-9;

/// Finite-order surrogate for "bounded by `C_k eps^k` for every `k`".
///
/// `series` holds `(eps_i, value_i)` with `eps` decreasing. For each
/// `k = 1..=k_max` the ratios `value_i / eps_i^k` must be finite and
/// nonincreasing over the tail of the net (its last third, at least three
/// points): `eps^{-k} e^{-1/eps}` rises until `eps = 1/k`, so only the
/// small-epsilon end carries the asymptotic information.
pub fn negligibility_check(series: &[(f64, f64)], k_max: u32) -> NegligibilityVerdict {
    let n = series.len();
    let tail_len = n.div_ceil(3).max(3).min(n);
    let tail_start = n - tail_len;
    let decreasing_eps = series.windows(2).all(|w| w[1].0 < w[0].0);
    let margins: Vec<OrderMargin> = (1..=k_max)
        .map(|k| {
            let ratios: Vec<f64> = series.iter().map(|(e, v)| v / e.powi(k as i32)).collect();
            let sane = n >= 3
                && decreasing_eps
                && series.iter().all(|(e, v)| *e > 0.0 && *v >= 0.0)
                && ratios.iter().all(|r| r.is_finite());
            let monotone = ratios[tail_start..]
                .windows(2)
                .all(|w| w[1] <= w[0] * (1.0 + TIE_SLACK));
            OrderMargin { k, ratios, tail_start, passed: sane && monotone }
        })
        .collect();
    NegligibilityVerdict { negligible: margins.iter().all(|m| m.passed), k_max, margins }
}
