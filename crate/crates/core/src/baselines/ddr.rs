//! Deep distribution regression: a softmax histogram over a fixed partition.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{MlpParams, OutputLoss};
use crate::dist::{check_level, ContinuousDist};
use crate::drn::softmax_pullback;
use crate::error::{DrnError, Result};
use crate::losses::jbce_terms;
use crate::partition::Partition;
use crate::scalar::Scalar;
use crate::special::softmax;

/// Piecewise-uniform distribution supported on `[c₀, c_K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram<T> {
    partition: Arc<Partition<T>>,
    probs: Vec<T>,
    cumulative: Vec<T>,
}

impl<T: Scalar> Histogram<T> {
    pub fn new(partition: Arc<Partition<T>>, probs: Vec<T>) -> Result<Self> {
        if probs.len() != partition.len() {
            return Err(DrnError::Dimension {
                context: "histogram probabilities",
                expected: partition.len(),
                found: probs.len(),
            });
        }
        let mut cumulative = Vec::with_capacity(probs.len() + 1);
        let mut acc = T::zero();
        cumulative.push(acc);
        for &p in &probs {
            acc = acc + p;
            cumulative.push(acc);
        }
        Ok(Self {
            partition,
            probs,
            cumulative,
        })
    }

    pub fn from_logits(partition: Arc<Partition<T>>, logits: &[T]) -> Result<Self> {
        Self::new(partition, softmax(logits))
    }

    pub fn partition(&self) -> &Partition<T> {
        &self.partition
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    /// Cdf at `c₀..c_K`.
    pub fn cutpoint_cdf(&self) -> &[T] {
        &self.cumulative
    }
}

impl<T: Scalar> ContinuousDist<T> for Histogram<T> {
    fn pdf(&self, y: T) -> T {
        match self.partition.locate(y) {
            Some(k) => self.probs[k] / self.partition.width(k),
            None => T::zero(),
        }
    }

    fn cdf(&self, y: T) -> T {
        if y < self.partition.lower() {
            return T::zero();
        }
        match self.partition.locate(y) {
            Some(k) => {
                let c = self.partition.cutpoints()[k];
                self.cumulative[k] + self.probs[k] * (y - c) / self.partition.width(k)
            }
            None => T::one(),
        }
    }

    fn quantile(&self, alpha: T) -> Result<T> {
        check_level(alpha, "histogram quantile")?;
        let cuts = self.partition.cutpoints();
        let total = self.cumulative[self.probs.len()];
        let target = alpha * total;
        let k = self.cumulative[1..]
            .partition_point(|&c| c < target)
            .min(self.probs.len() - 1);
        if self.probs[k] <= T::zero() {
            return Ok(cuts[k]);
        }
        let frac = (target - self.cumulative[k]) / self.probs[k];
        Ok(cuts[k] + frac.max(T::zero()).min(T::one()) * self.partition.width(k))
    }

    fn mean(&self) -> T {
        let half = T::c(0.5);
        self.partition
            .cutpoints()
            .windows(2)
            .zip(&self.probs)
            .map(|(c, &p)| p * (c[0] + c[1]) * half)
            .sum()
    }

    /// Exact: the integrand is a quadratic in `t` on each interval.
    fn crps(&self, y: T) -> T {
        let cuts = self.partition.cutpoints();
        let three = T::c(3.0);
        // ∫ of (F - h)² where F runs linearly from u to v over length L.
        let piece = |u: T, v: T, len: T| len * (u * u + u * v + v * v) / three;
        let mut total = T::zero();
        let lo = self.partition.lower();
        let hi = self.partition.upper();
        if y < lo {
            total = total + (lo - y);
        }
        if y > hi {
            total = total + (y - hi);
        }
        for k in 0..self.probs.len() {
            let (a, b) = (cuts[k], cuts[k + 1]);
            let (fa, fb) = (self.cumulative[k], self.cumulative[k + 1]);
            if y <= a {
                total = total + piece(T::one() - fa, T::one() - fb, b - a);
            } else if y >= b {
                total = total + piece(fa, fb, b - a);
            } else {
                let fy = self.cdf(y);
                total = total + piece(fa, fy, y - a) + piece(T::one() - fy, T::one() - fb, b - y);
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct DdrModel<T> {
    net: MlpParams<T>,
    partition: Arc<Partition<T>>,
}

impl<T: Scalar> DdrModel<T> {
    pub fn new(net: MlpParams<T>, partition: Partition<T>) -> Result<Self> {
        if net.output_dim() != partition.len() {
            return Err(DrnError::Dimension {
                context: "DDR network output",
                expected: partition.len(),
                found: net.output_dim(),
            });
        }
        Ok(Self {
            net,
            partition: Arc::new(partition),
        })
    }

    pub fn init<R: Rng + ?Sized>(
        n_features: usize,
        partition: Partition<T>,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![n_features];
        sizes.extend_from_slice(hidden);
        sizes.push(partition.len());
        Self::new(MlpParams::init(&sizes, rng), partition)
    }

    pub fn net(&self) -> &MlpParams<T> {
        &self.net
    }

    pub fn partition(&self) -> &Partition<T> {
        &self.partition
    }

    pub fn with_net(&self, net: MlpParams<T>) -> Result<Self> {
        Self::new(net, (*self.partition).clone())
    }

    pub fn probabilities(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(softmax(&self.net.forward_one(x)?))
    }

    pub fn conditional(&self, x: &[T]) -> Result<Histogram<T>> {
        Histogram::from_logits(Arc::clone(&self.partition), &self.net.forward_one(x)?)
    }
}

/// Batch-mean JBCE at `c₁..c_K` over raw DDR logits.
#[derive(Debug, Clone, Copy)]
pub struct DdrObjective<'a, T> {
    pub partition: &'a Partition<T>,
    pub y: &'a [T],
}

impl<T: Scalar> OutputLoss<T> for DdrObjective<'_, T> {
    fn loss_and_grad(&self, outputs: ArrayView2<T>, rows: &[usize]) -> Result<(T, Array2<T>)> {
        let n = T::from_usize_lossy(rows.len());
        let k = self.partition.len();
        let cuts = &self.partition.cutpoints()[1..];
        let mut grad = Array2::zeros(outputs.raw_dim());
        let mut total = T::zero();
        for (i, &r) in rows.iter().enumerate() {
            let probs = softmax(&outputs.row(i).to_vec());
            let mut cdf = Vec::with_capacity(k);
            let mut acc = T::zero();
            for &p in &probs {
                acc = acc + p;
                cdf.push(acc);
            }
            let (v, d_cdf) = jbce_terms(&cdf, cuts, self.y[r]);
            total = total + v;
            let mut g = vec![T::zero(); k];
            let mut suffix = T::zero();
            for j in (0..k).rev() {
                suffix = suffix + d_cdf[j];
                g[j] = suffix;
            }
            for (j, d) in softmax_pullback(&probs, T::one(), &g).into_iter().enumerate() {
                grad[[i, j]] = d / n;
            }
        }
        Ok((total / n, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hist() -> Histogram<f64> {
        let p = Arc::new(Partition::new(vec![0.0, 1.0, 3.0]).unwrap());
        Histogram::new(p, vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn densities_and_cdf() {
        let h = hist();
        assert_eq!(h.pdf(0.5), 0.5);
        assert_eq!(h.pdf(2.0), 0.25);
        assert_eq!(h.pdf(3.0), 0.0);
        assert_eq!(h.pdf(-0.1), 0.0);
        assert_eq!(h.cdf(3.0), 1.0);
        assert_eq!(h.cdf(-1.0), 0.0);
        assert_eq!(h.cdf(2.0), 0.75);
        assert_eq!(h.mean(), 0.5 * 0.5 + 0.5 * 2.0);
        assert_eq!(h.quantile(0.75).unwrap(), 2.0);
        assert!(h.quantile(0.0).is_err());
    }

    #[test]
    fn out_of_region_nll_is_infinite() {
        let nll = -hist().pdf(5.0).ln();
        assert!(nll.is_infinite() && nll > 0.0);
    }

    #[test]
    fn crps_matches_quadrature() {
        let h = hist();
        for y in [-1.0, 0.0, 0.4, 1.0, 2.2, 3.0, 4.5] {
            let numeric = crate::dist::crps_numeric(|t| h.cdf(t), y, -2.0, 5.0);
            assert_abs_diff_eq!(h.crps(y), numeric, epsilon = 1e-8);
        }
    }

    #[test]
    fn jbce_constant_half() {
        // Two cutpoints at 0.5 each, the last clamped at 1.
        let p = Partition::new(vec![0.0, 1.0, 2.0]).unwrap();
        let obj = DdrObjective {
            partition: &p,
            y: &[0.5],
        };
        let out = ndarray::array![[0.0, 0.0]];
        let (v, _) = obj.loss_and_grad(out.view(), &[0]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-6);
    }
}
