//! Baseline interval masses and the softmax refinement of them.

use crate::dist::ContinuousDist;
use crate::error::{DrnError, Result};
use crate::glm::GammaDist;
use crate::partition::Partition;
use crate::scalar::Scalar;
use crate::special::log_sum_exp;

/// Floor applied to baseline masses before taking logs.
pub const MASS_FLOOR: f64 = 1e-30;

/// `b_k = F(c_k) - F(c_{k-1})` for every interval.
///
/// Intervals past the median are differenced on the survival function so
/// small upper-tail masses keep their relative precision.
pub fn baseline_masses<T: Scalar>(dist: &GammaDist<T>, partition: &Partition<T>) -> Vec<T> {
    let cdf: Vec<T> = partition.cutpoints().iter().map(|&c| dist.cdf(c)).collect();
    let half = T::c(0.5);
    partition
        .cutpoints()
        .windows(2)
        .zip(cdf.windows(2))
        .map(|(c, f)| {
            let b = if f[0] > half {
                dist.sf(c[0]) - dist.sf(c[1])
            } else {
                f[1] - f[0]
            };
            b.max(T::zero())
        })
        .collect()
}

/// The frozen baseline of one instance, summarized against a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSummary<T> {
    pub dist: GammaDist<T>,
    pub masses: Vec<T>,
    /// `F(c₀)`.
    pub lower_cdf: T,
    /// `F(c_K)`.
    pub upper_cdf: T,
    /// `∫ y f(y) dy` over `[c₀, c_K)`.
    pub region_moment: T,
}

impl<T: Scalar> BaselineSummary<T> {
    pub fn new(dist: GammaDist<T>, partition: &Partition<T>) -> Self {
        Self {
            masses: baseline_masses(&dist, partition),
            lower_cdf: dist.cdf(partition.lower()),
            upper_cdf: dist.cdf(partition.upper()),
            region_moment: dist.partial_expectation(partition.lower(), partition.upper()),
            dist,
        }
    }

    /// Total baseline mass of the refinement region, `Σ b_k`.
    pub fn region_mass(&self) -> T {
        self.masses.iter().copied().sum()
    }
}

/// Refined masses and the adjustment factors they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjustment<T> {
    /// `m_k = a_k b_k`, summing to the region mass.
    pub masses: Vec<T>,
    /// `a_k = m_k / max(b_k, 1e-30)`.
    pub factors: Vec<T>,
    /// `ln a_k`, evaluated without forming `m_k`.
    pub log_factors: Vec<T>,
    /// Set where `b_k` fell below the floor, so `a_k` is not physical.
    pub clamped: Vec<bool>,
}

/// `m = R·softmax(ln b + l)` and `a = m / b`.
pub fn adjustment_factors<T: Scalar>(logits: &[T], b: &[T], region_mass: T) -> Result<Adjustment<T>> {
    if logits.len() != b.len() {
        return Err(DrnError::Dimension {
            context: "refinement logits",
            expected: b.len(),
            found: logits.len(),
        });
    }
    if !(region_mass > T::zero()) || b.iter().all(|&v| v <= T::zero()) {
        return Err(DrnError::DegenerateBaseline);
    }
    let floor = T::c(MASS_FLOOR);
    let clamped: Vec<bool> = b.iter().map(|&v| v < floor).collect();
    let log_b: Vec<T> = b.iter().map(|&v| v.max(floor).ln()).collect();
    let scores: Vec<T> = log_b.iter().zip(logits).map(|(&lb, &l)| lb + l).collect();
    let lse = log_sum_exp(&scores);
    let ln_r = region_mass.ln();
    let masses: Vec<T> = scores
        .iter()
        .map(|&s| region_mass * (s - lse).exp())
        .collect();
    let log_factors: Vec<T> = logits.iter().map(|&l| ln_r + l - lse).collect();
    let factors = log_factors.iter().map(|v| v.exp()).collect();
    Ok(Adjustment {
        masses,
        factors,
        log_factors,
        clamped,
    })
}

/// Pulls `∂L/∂m` back through the softmax to `∂L/∂l`.
///
/// With `s = m / R`, `∂L/∂l_j = m_j (g_j - Σ_k s_k g_k)`.
pub(crate) fn softmax_pullback<T: Scalar>(masses: &[T], region_mass: T, g: &[T]) -> Vec<T> {
    let mean: T = masses
        .iter()
        .zip(g)
        .map(|(&m, &gk)| m / region_mass * gk)
        .sum();
    masses.iter().zip(g).map(|(&m, &gk)| m * (gk - mean)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_exponential_masses() {
        let d = GammaDist::new(1.0, 1.0).unwrap();
        let p = Partition::new(vec![0.0, 1.0, 2.0]).unwrap();
        let b = baseline_masses(&d, &p);
        assert_abs_diff_eq!(b[0], 1.0 - (-1.0f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(b[1], (-1.0f64).exp() - (-2.0f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(b[0], 0.632121, epsilon = 1e-6);
        assert_abs_diff_eq!(b[1], 0.232544, epsilon = 1e-6);
    }

    #[test]
    fn masses_telescope_to_region_mass() {
        let d = GammaDist::new(2.3, 0.7).unwrap();
        let p = Partition::new(vec![0.2, 0.5, 0.9, 1.4, 2.2, 3.5, 6.0]).unwrap();
        let s = BaselineSummary::new(d, &p);
        assert_abs_diff_eq!(s.region_mass(), s.upper_cdf - s.lower_cdf, epsilon = 1e-12);
    }

    #[test]
    fn zero_mass_region() {
        let d = GammaDist::new(2.0, 0.01).unwrap();
        let p = Partition::new(vec![1e3, 2e3, 3e3]).unwrap();
        assert!(baseline_masses(&d, &p).iter().all(|&b| b == 0.0));
        assert!(matches!(
            adjustment_factors(&[0.0, 0.0], &[0.0, 0.0], 0.0),
            Err(DrnError::DegenerateBaseline)
        ));
    }

    #[test]
    fn constant_logits_leave_baseline() {
        let adj = adjustment_factors(&[0.7, 0.7, 0.7], &[0.2, 0.5, 0.1], 0.8).unwrap();
        for a in &adj.factors {
            assert_abs_diff_eq!(*a, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn hand_evaluated_factors() {
        let adj = adjustment_factors(&[2f64.ln(), 0.0], &[0.6, 0.3], 0.9).unwrap();
        assert_abs_diff_eq!(adj.factors[0], 1.2, epsilon = 1e-14);
        assert_abs_diff_eq!(adj.factors[1], 0.6, epsilon = 1e-14);
        assert_abs_diff_eq!(adj.masses[0], 0.72, epsilon = 1e-14);
        assert_abs_diff_eq!(adj.masses[1], 0.18, epsilon = 1e-14);
        let total: f64 = adj.masses.iter().sum();
        assert_abs_diff_eq!(total, 0.9, epsilon = 1e-14);
    }

    #[test]
    fn shift_invariance() {
        let b = [0.1, 0.25, 0.3, 0.05];
        let l = [0.3, -1.2, 2.0, 0.4];
        let shifted: Vec<f64> = l.iter().map(|v| v + 17.5).collect();
        let a = adjustment_factors(&l, &b, 0.7).unwrap();
        let s = adjustment_factors(&shifted, &b, 0.7).unwrap();
        for (x, y) in a.masses.iter().zip(&s.masses) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn clamped_intervals_are_flagged() {
        let adj = adjustment_factors(&[0.0_f64, 0.0], &[0.5, 0.0], 0.5).unwrap();
        assert_eq!(adj.clamped, vec![false, true]);
        assert!(adj.masses.iter().all(|m| m.is_finite()));
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let b = [0.1, 0.25, 0.3, 0.05];
        let l = [0.3, -1.2, 2.0, 0.4];
        let w = [1.0, -2.0, 0.5, 3.0];
        let f = |l: &[f64]| -> f64 {
            let adj = adjustment_factors(l, &b, 0.7).unwrap();
            adj.masses.iter().zip(&w).map(|(m, w)| m * w).sum()
        };
        let adj = adjustment_factors(&l, &b, 0.7).unwrap();
        let grad = softmax_pullback(&adj.masses, 0.7, &w);
        for j in 0..4 {
            let mut up = l;
            let mut down = l;
            up[j] += 1e-6;
            down[j] -= 1e-6;
            let num = (f(&up) - f(&down)) / 2e-6;
            assert_abs_diff_eq!(grad[j], num, epsilon = 1e-8);
        }
    }
}
