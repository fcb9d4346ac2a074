//! Common query surface for every predictive distribution in the crate.

use crate::error::{DrnError, Result};
use crate::scalar::Scalar;
use crate::special::adaptive_simpson;

/// Tail mass left out when a CRPS integral is truncated numerically.
pub const CRPS_TAIL_PROB: f64 = 1e-7;
/// Absolute tolerance for numeric CRPS quadrature.
pub const CRPS_QUAD_TOL: f64 = 1e-8;
/// Target accuracy `|cdf(q) - alpha|` for numeric quantile inversion.
pub const QUANTILE_TOL: f64 = 1e-10;

/// A univariate predictive distribution.
pub trait ContinuousDist<T: Scalar> {
    fn pdf(&self, y: T) -> T;

    fn cdf(&self, y: T) -> T;

    fn quantile(&self, alpha: T) -> Result<T>;

    fn mean(&self) -> T;

    /// Continuous ranked probability score of the observation `y`.
    ///
    /// The default integrates `(F(t) - 1{t > y})^2` numerically between the
    /// `1e-7` and `1 - 1e-7` quantiles, split at `y`.
    fn crps(&self, y: T) -> T {
        let lo = self.quantile(T::c(CRPS_TAIL_PROB)).map(T::f64);
        let hi = self.quantile(T::c(1.0 - CRPS_TAIL_PROB)).map(T::f64);
        let (Ok(lo), Ok(hi)) = (lo, hi) else {
            return T::nan();
        };
        T::c(crps_numeric(|t| self.cdf(T::c(t)).f64(), y.f64(), lo, hi))
    }
}

/// `∫ (F(t) - 1{t > y})^2 dt` over `[min(lo, y), max(hi, y)]`, split at `y`.
pub(crate) fn crps_numeric<F: Fn(f64) -> f64>(cdf: F, y: f64, lo: f64, hi: f64) -> f64 {
    let below = |t: f64| cdf(t).powi(2);
    let above = |t: f64| (1.0 - cdf(t)).powi(2);
    let a = lo.min(y);
    let b = hi.max(y);
    adaptive_simpson(&below, a, y, CRPS_QUAD_TOL) + adaptive_simpson(&above, y, b, CRPS_QUAD_TOL)
}

pub(crate) fn check_level<T: Scalar>(alpha: T, context: &'static str) -> Result<()> {
    if alpha > T::zero() && alpha < T::one() {
        Ok(())
    } else {
        Err(DrnError::Domain {
            context,
            value: alpha.f64(),
        })
    }
}

/// Inverts a continuous nondecreasing `cdf` on `[lower, ∞)` by bracketing and a
/// bisection/Newton hybrid. `guess` seeds the upper bracket.
pub(crate) fn invert_cdf<T, C, D>(cdf: C, pdf: D, alpha: T, lower: T, guess: T) -> T
where
    T: Scalar,
    C: Fn(T) -> T,
    D: Fn(T) -> T,
{
    let tol = T::c(QUANTILE_TOL).max(T::epsilon() * T::c(16.0));
    let two = T::c(2.0);
    let mut lo = lower;
    let mut hi = if guess > lower { guess } else { lower + T::one() };
    let mut step = hi - lo;
    while cdf(hi) < alpha {
        lo = hi;
        step = step * two;
        hi = hi + step;
        if !hi.is_finite() {
            return hi;
        }
    }
    let mut x = lo + (hi - lo) / two;
    for _ in 0..400 {
        let fx = cdf(x) - alpha;
        if fx.abs() < tol {
            return x;
        }
        if fx < T::zero() {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(x);
        let newton = x - fx / d;
        x = if d > T::zero() && newton > lo && newton < hi {
            newton
        } else {
            lo + (hi - lo) / two
        };
        if hi - lo <= T::epsilon() * hi.abs().max(T::one()) {
            return x;
        }
    }
    x
}
