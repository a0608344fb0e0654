//! Convex entropy densities and entropy time series.

use serde::{Deserialize, Serialize};

/// Smoothing width of the non-smooth densities.
pub const SMOOTHING: f64 = 1e-6;

/// A pointwise function `H(r)` used in the generalized relative entropy
/// `∫ H(f/ρ) φ ρ dx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexH {
    /// `r²`
    Square,
    /// `√((r−1)² + δ²)`
    SmoothAbs,
    /// `r log r` on `r > 0`
    RLogR,
    /// `s(r−1)²` with `s(y) = (y + √(y² + δ²))/2`
    SmoothPositiveSquare,
    /// `r`
    Linear,
    /// `−r²`, not convex; a negative control for the decay checks.
    NegSquare,
}

impl ConvexH {
    pub const ALL: [ConvexH; 6] = [
        ConvexH::Square,
        ConvexH::SmoothAbs,
        ConvexH::RLogR,
        ConvexH::SmoothPositiveSquare,
        ConvexH::Linear,
        ConvexH::NegSquare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConvexH::Square => "square",
            ConvexH::SmoothAbs => "smooth_abs",
            ConvexH::RLogR => "r_log_r",
            ConvexH::SmoothPositiveSquare => "smooth_positive_square",
            ConvexH::Linear => "linear",
            ConvexH::NegSquare => "neg_square",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|h| h.name() == name)
    }

    pub fn eval(self, r: f64) -> f64 {
        match self {
            ConvexH::Square => r * r,
            ConvexH::SmoothAbs => ((r - 1.0).powi(2) + SMOOTHING * SMOOTHING).sqrt(),
            ConvexH::RLogR => {
                if r > 0.0 {
                    r * r.ln()
                } else if r == 0.0 {
                    0.0
                } else {
                    f64::NAN
                }
            }
            ConvexH::SmoothPositiveSquare => {
                let y = r - 1.0;
                let s = 0.5 * (y + (y * y + SMOOTHING * SMOOTHING).sqrt());
                s * s
            }
            ConvexH::Linear => r,
            ConvexH::NegSquare => -r * r,
        }
    }

    /// `true` when `r` lies in the declared domain of `H`.
    pub fn in_domain(self, r: f64) -> bool {
        match self {
            ConvexH::RLogR => r > 0.0,
            _ => r.is_finite(),
        }
    }

    /// Numerical convexity: the second central difference with step `h` is
    /// at least `−1e-10` at `samples` points of `[lo, hi]` inside the domain.
    pub fn is_convex_on(self, lo: f64, hi: f64, samples: usize, h: f64) -> bool {
        (0..samples).all(|i| {
            let r = lo + (hi - lo) * i as f64 / (samples.max(2) - 1) as f64;
            if !(self.in_domain(r - h) && self.in_domain(r + h)) {
                return true;
            }
            self.eval(r + h) - 2.0 * self.eval(r) + self.eval(r - h) >= -1e-10
        })
    }
}

/// A time series of an entropy functional with its monotonicity verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub h: ConvexH,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Lower/upper confidence bands of `values`, when estimated.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// `values[k+1] − values[k]`
    pub increments: Vec<f64>,
    /// Tolerance on positive increments.
    pub slack: f64,
    /// Number of increments exceeding the slack (or, with bands, whose lower
    /// confidence bound is positive).
    pub violations: usize,
    pub max_increment: f64,
}

impl EntropyReport {
    /// Deterministic series: an increment violates when it exceeds `slack`.
    pub fn from_series(h: ConvexH, times: Vec<f64>, values: Vec<f64>, slack: f64) -> Self {
        let increments: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
        let violations = increments.iter().filter(|&&d| d > slack).count();
        let max_increment = increments.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            h,
            times,
            values,
            lower: None,
            upper: None,
            increments,
            slack,
            violations,
            max_increment,
        }
    }

    pub fn is_nonincreasing(&self) -> bool {
        self.violations == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_is_convex_and_control_is_not() {
        for h in ConvexH::ALL {
            let convex = h.is_convex_on(-3.0, 5.0, 2001, 1e-3) && h.is_convex_on(0.99, 1.01, 2001, 1e-7);
            assert_eq!(convex, h != ConvexH::NegSquare, "{h:?}");
            assert_eq!(ConvexH::from_name(h.name()), Some(h));
        }
    }

    #[test]
    fn values() {
        assert_eq!(ConvexH::Square.eval(3.0), 9.0);
        assert!((ConvexH::SmoothAbs.eval(3.0) - 2.0).abs() < 1e-12);
        assert_eq!(ConvexH::RLogR.eval(1.0), 0.0);
        assert!(ConvexH::RLogR.eval(-1.0).is_nan());
        assert!((ConvexH::SmoothPositiveSquare.eval(3.0) - 4.0).abs() < 1e-10);
        assert!(ConvexH::SmoothPositiveSquare.eval(-3.0) < 1e-20);
    }

    #[test]
    fn report_counts_violations() {
        let r = EntropyReport::from_series(ConvexH::Square, vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 1.5], 1e-8);
        assert_eq!(r.violations, 1);
        assert_eq!(r.max_increment, 0.5);
        assert!(!r.is_nonincreasing());
    }
}
