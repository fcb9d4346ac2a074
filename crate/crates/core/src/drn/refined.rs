//! Per-instance refined distribution: baseline tails, uniform interval masses.

use std::sync::Arc;

use crate::dist::{check_level, ContinuousDist, CRPS_QUAD_TOL, CRPS_TAIL_PROB};
use crate::drn::masses::{adjustment_factors, Adjustment, BaselineSummary};
use crate::error::Result;
use crate::glm::GammaDist;
use crate::partition::Partition;
use crate::scalar::Scalar;
use crate::special::adaptive_simpson;

#[derive(Debug, Clone)]
pub struct RefinedDistribution<T> {
    partition: Arc<Partition<T>>,
    baseline: GammaDist<T>,
    baseline_masses: Vec<T>,
    adjustment: Adjustment<T>,
    region_mass: T,
    /// `F(c₀) + Σ_{j<k} m_j` for `k = 0..=K`.
    cumulative: Vec<T>,
}

impl<T: Scalar> RefinedDistribution<T> {
    /// Refines `summary` with raw network outputs `logits`.
    pub fn new(partition: Arc<Partition<T>>, summary: &BaselineSummary<T>, logits: &[T]) -> Result<Self> {
        let region_mass = summary.region_mass();
        let adjustment = adjustment_factors(logits, &summary.masses, region_mass)?;
        let mut cumulative = Vec::with_capacity(adjustment.masses.len() + 1);
        let mut acc = summary.lower_cdf;
        cumulative.push(acc);
        for &m in &adjustment.masses {
            acc = acc + m;
            cumulative.push(acc);
        }
        Ok(Self {
            partition,
            baseline: summary.dist,
            baseline_masses: summary.masses.clone(),
            adjustment,
            region_mass,
            cumulative,
        })
    }

    pub fn partition(&self) -> &Partition<T> {
        &self.partition
    }

    pub fn baseline(&self) -> &GammaDist<T> {
        &self.baseline
    }

    pub fn baseline_masses(&self) -> &[T] {
        &self.baseline_masses
    }

    pub fn masses(&self) -> &[T] {
        &self.adjustment.masses
    }

    pub fn adjustments(&self) -> &[T] {
        &self.adjustment.factors
    }

    pub fn log_adjustments(&self) -> &[T] {
        &self.adjustment.log_factors
    }

    /// Intervals whose baseline mass was floored; their factors are not physical.
    pub fn clamped(&self) -> &[bool] {
        &self.adjustment.clamped
    }

    pub fn region_mass(&self) -> T {
        self.region_mass
    }

    /// Density level `m_k / |T_k|` of each interval.
    pub fn levels(&self) -> Vec<T> {
        self.masses()
            .iter()
            .zip(self.partition.widths())
            .map(|(&m, w)| m / w)
            .collect()
    }

    /// DRN cdf at each cutpoint `c₀..c_K`.
    pub fn cutpoint_cdf(&self) -> &[T] {
        &self.cumulative
    }

    /// `∫ y f(y) dy` over both baseline tails.
    fn tail_moment(&self, second: bool) -> T {
        let (lo, hi) = (self.partition.lower(), self.partition.upper());
        let pm = |a, b| {
            if second {
                self.baseline.partial_second_moment(a, b)
            } else {
                self.baseline.partial_expectation(a, b)
            }
        };
        pm(T::zero(), lo) + pm(hi, T::infinity())
    }

    pub fn variance(&self) -> T {
        let three = T::c(3.0);
        let inner: T = self
            .partition
            .cutpoints()
            .windows(2)
            .zip(self.masses())
            .map(|(c, &m)| m * (c[0] * c[0] + c[0] * c[1] + c[1] * c[1]) / three)
            .sum();
        let mean = self.mean();
        (self.tail_moment(true) + inner - mean * mean).max(T::zero())
    }

    /// `∫ (F(t) - 1{t ≥ y})²` over the refinement region, exact for the
    /// piecewise-linear cdf.
    fn region_crps(&self, y: f64) -> f64 {
        let cuts = self.partition.cutpoints();
        let mut total = 0.0;
        for k in 0..self.partition.len() {
            let (a, b) = (cuts[k].f64(), cuts[k + 1].f64());
            let f0 = self.cumulative[k].f64();
            let slope = self.masses()[k].f64() / (b - a);
            let mut piece = |lo: f64, hi: f64, h: f64| {
                let u = f0 + slope * (lo - a) - h;
                let v = f0 + slope * (hi - a) - h;
                total += (hi - lo) * (u * u + u * v + v * v) / 3.0;
            };
            if y <= a {
                piece(a, b, 1.0);
            } else if y >= b {
                piece(a, b, 0.0);
            } else {
                piece(a, y, 0.0);
                piece(y, b, 1.0);
            }
        }
        total
    }
}

impl<T: Scalar> ContinuousDist<T> for RefinedDistribution<T> {
    fn pdf(&self, y: T) -> T {
        match self.partition.locate(y) {
            Some(k) => self.masses()[k] / self.partition.width(k),
            None => self.baseline.pdf(y),
        }
    }

    fn cdf(&self, y: T) -> T {
        match self.partition.locate(y) {
            Some(k) => {
                let c = self.partition.cutpoints()[k];
                self.cumulative[k] + self.masses()[k] * (y - c) / self.partition.width(k)
            }
            None => self.baseline.cdf(y),
        }
    }

    fn quantile(&self, alpha: T) -> Result<T> {
        check_level(alpha, "refined quantile")?;
        let k_max = self.partition.len();
        if alpha < self.cumulative[0] || alpha >= self.cumulative[k_max] {
            return self.baseline.quantile(alpha);
        }
        // Last cutpoint whose cdf does not exceed alpha; its interval has m_k > 0.
        let k = self.cumulative.partition_point(|&c| c <= alpha) - 1;
        let c = self.partition.cutpoints()[k];
        Ok(c + (alpha - self.cumulative[k]) / self.masses()[k] * self.partition.width(k))
    }

    fn mean(&self) -> T {
        let half = T::c(0.5);
        let inner: T = self
            .partition
            .cutpoints()
            .windows(2)
            .zip(self.masses())
            .map(|(c, &m)| m * (c[0] + c[1]) * half)
            .sum();
        self.tail_moment(false) + inner
    }

    /// Exact over the refinement region, adaptive quadrature over the tails
    /// out to the baseline's `1e-7` and `1 - 1e-7` quantiles.
    fn crps(&self, y: T) -> T {
        let yf = y.f64();
        let (c0, ck) = (self.partition.lower().f64(), self.partition.upper().f64());
        let lo = self
            .baseline
            .quantile(T::c(CRPS_TAIL_PROB))
            .map_or(0.0, T::f64)
            .min(yf);
        let hi = self
            .baseline
            .quantile(T::c(1.0 - CRPS_TAIL_PROB))
            .map_or(f64::INFINITY, T::f64)
            .max(yf);
        let cdf = |t: f64| self.baseline.cdf(T::c(t)).f64();
        let tail = |a: f64, b: f64| -> f64 {
            if b <= a {
                return 0.0;
            }
            let below = |t: f64| cdf(t).powi(2);
            let above = |t: f64| (1.0 - cdf(t)).powi(2);
            if yf <= a {
                adaptive_simpson(&above, a, b, CRPS_QUAD_TOL)
            } else if yf >= b {
                adaptive_simpson(&below, a, b, CRPS_QUAD_TOL)
            } else {
                adaptive_simpson(&below, a, yf, CRPS_QUAD_TOL)
                    + adaptive_simpson(&above, yf, b, CRPS_QUAD_TOL)
            }
        };
        T::c(tail(lo, c0) + self.region_crps(yf) + tail(ck, hi))
    }
}

/// Piecewise-constant version of the baseline: the refinement with `a ≡ 1`.
pub fn ppc_transform<T: Scalar>(dist: GammaDist<T>, partition: Arc<Partition<T>>) -> Result<RefinedDistribution<T>> {
    let summary = BaselineSummary::new(dist, &partition);
    let zeros = vec![T::zero(); partition.len()];
    RefinedDistribution::new(partition, &summary, &zeros)
}
