//! Training objectives for the refinement network.
//!
//! The value functions take refined distributions and are what evaluation
//! reports. [`DrnObjective`] computes the same quantities from raw network
//! outputs together with their gradients, for training.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::diffengine::OutputLoss;
use crate::dist::ContinuousDist;
use crate::drn::{adjustment_factors, softmax_pullback, BaselineSummary, RefinedDistribution};
use crate::error::{DrnError, Result};
use crate::partition::Partition;
use crate::scalar::Scalar;

/// Densities below this are clamped before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-30;
/// JBCE probabilities are clamped to `[ε, 1 - ε]`.
pub const PROB_CLAMP: f64 = 1e-12;

static NLL_CLAMP_EVENTS: AtomicUsize = AtomicUsize::new(0);

/// Number of densities clamped by NLL evaluations since process start.
pub fn nll_clamp_events() -> usize {
    NLL_CLAMP_EVENTS.load(Ordering::Relaxed)
}

fn clamped_neg_log_density<T: Scalar>(d: T) -> (T, bool) {
    let floor = T::c(DENSITY_FLOOR);
    if d < floor {
        NLL_CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        (-floor.ln(), true)
    } else {
        (-d.ln(), false)
    }
}

/// Coefficients on the KL, roughness and mean penalties.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub kl: f64,
    pub roughness: f64,
    pub mean: f64,
}

impl PenaltyWeights {
    pub fn new(kl: f64, roughness: f64, mean: f64) -> Result<Self> {
        let w = Self { kl, roughness, mean };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kl", self.kl), ("roughness", self.roughness), ("mean", self.mean)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DrnError::invalid(format!(
                    "penalty weight {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The data-fit term of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitLoss {
    #[default]
    Jbce,
    Nll,
}

/// Joint binary cross-entropy of one observation and its derivative with
/// respect to each cdf value. `cdf[k]` is the predicted cdf at `cuts[k]`.
pub fn jbce_terms<T: Scalar>(cdf: &[T], cuts: &[T], y: T) -> (T, Vec<T>) {
    let eps = T::c(PROB_CLAMP);
    let one = T::one();
    let mut loss = T::zero();
    let grad = cdf
        .iter()
        .zip(cuts)
        .map(|(&f, &c)| {
            let p = f.max(eps).min(one - eps);
            let free = p == f;
            if y <= c {
                loss = loss - p.ln();
                if free { -one / p } else { T::zero() }
            } else {
                loss = loss - (one - p).ln();
                if free { one / (one - p) } else { T::zero() }
            }
        })
        .collect();
    (loss, grad)
}

/// Sum of squared second differences of density levels, with gradient.
pub fn roughness_terms<T: Scalar>(levels: &[T]) -> (T, Vec<T>) {
    let k = levels.len();
    let mut grad = vec![T::zero(); k];
    let mut total = T::zero();
    if k < 3 {
        return (total, grad);
    }
    let two = T::c(2.0);
    for i in 1..k - 1 {
        let e = levels[i + 1] - two * levels[i] + levels[i - 1];
        total = total + e * e;
        grad[i - 1] = grad[i - 1] + two * e;
        grad[i] = grad[i] - T::c(4.0) * e;
        grad[i + 1] = grad[i + 1] + two * e;
    }
    (total, grad)
}

fn check_sizes(n: usize, m: usize) -> Result<()> {
    if n != m {
        return Err(DrnError::Dimension {
            context: "loss batch",
            expected: n,
            found: m,
        });
    }
    Ok(())
}

/// `-Σ ln f(y_i)`, densities floored at `1e-30`.
pub fn nll_loss<T: Scalar, D: ContinuousDist<T>>(dists: &[D], y: &[T]) -> Result<T> {
    check_sizes(dists.len(), y.len())?;
    Ok(dists
        .iter()
        .zip(y)
        .map(|(d, &yi)| clamped_neg_log_density(d.pdf(yi)).0)
        .sum())
}

/// Batch-summed JBCE at the cutpoints `c₁..c_K`.
pub fn jbce_loss<T: Scalar>(dists: &[RefinedDistribution<T>], y: &[T]) -> Result<T> {
    check_sizes(dists.len(), y.len())?;
    Ok(dists
        .iter()
        .zip(y)
        .map(|(d, &yi)| {
            let cuts = &d.partition().cutpoints()[1..];
            jbce_terms(&d.cutpoint_cdf()[1..], cuts, yi).0
        })
        .sum())
}

fn batch_mean<T: Scalar>(n: usize, total: T) -> T {
    if n == 0 {
        T::zero()
    } else {
        total / T::from_usize_lossy(n)
    }
}

/// Batch mean of `-Σ_k b_k ln a_k`.
pub fn kl_penalty<T: Scalar>(dists: &[RefinedDistribution<T>]) -> T {
    let total = dists
        .iter()
        .map(|d| {
            d.baseline_masses()
                .iter()
                .zip(d.log_adjustments())
                .filter(|(&b, _)| b > T::zero())
                .map(|(&b, &la)| -b * la)
                .sum::<T>()
        })
        .sum();
    batch_mean(dists.len(), total)
}

/// Batch mean of the squared second differences of density levels.
pub fn roughness_penalty<T: Scalar>(dists: &[RefinedDistribution<T>]) -> T {
    let total = dists.iter().map(|d| roughness_terms(&d.levels()).0).sum();
    batch_mean(dists.len(), total)
}

/// Batch mean of `(E[Y] - μ_baseline)²`.
pub fn mean_penalty<T: Scalar>(dists: &[RefinedDistribution<T>], baseline_means: &[T]) -> Result<T> {
    check_sizes(dists.len(), baseline_means.len())?;
    let total = dists
        .iter()
        .zip(baseline_means)
        .map(|(d, &mu)| (d.mean() - mu).powi(2))
        .sum();
    Ok(batch_mean(dists.len(), total))
}

/// Per-observation JBCE plus the weighted penalties.
pub fn composite_loss<T: Scalar>(
    dists: &[RefinedDistribution<T>],
    y: &[T],
    weights: &PenaltyWeights,
) -> Result<T> {
    let fit = batch_mean(dists.len(), jbce_loss(dists, y)?);
    let means: Vec<T> = dists.iter().map(|d| d.baseline().mean()).collect();
    Ok(fit
        + T::c(weights.kl) * kl_penalty(dists)
        + T::c(weights.roughness) * roughness_penalty(dists)
        + T::c(weights.mean) * mean_penalty(dists, &means)?)
}

/// The regularized DRN objective over raw network outputs.
///
/// Row `i` of a batch of outputs belongs to dataset row `rows[i]`, whose
/// baseline summary and response are looked up here. The loss is averaged
/// over the batch.
#[derive(Debug, Clone, Copy)]
pub struct DrnObjective<'a, T> {
    pub partition: &'a Partition<T>,
    pub baselines: &'a [BaselineSummary<T>],
    pub y: &'a [T],
    pub fit: FitLoss,
    pub weights: PenaltyWeights,
}

impl<'a, T: Scalar> DrnObjective<'a, T> {
    pub fn new(
        partition: &'a Partition<T>,
        baselines: &'a [BaselineSummary<T>],
        y: &'a [T],
        fit: FitLoss,
        weights: PenaltyWeights,
    ) -> Result<Self> {
        check_sizes(baselines.len(), y.len())?;
        weights.validate()?;
        Ok(Self {
            partition,
            baselines,
            y,
            fit,
            weights,
        })
    }

    /// Loss of one observation and its gradient with respect to the logits.
    pub fn observation(&self, logits: &[T], row: usize) -> Result<(T, Vec<T>)> {
        let s = &self.baselines[row];
        let y = self.y[row];
        let r = s.region_mass();
        let adj = adjustment_factors(logits, &s.masses, r)?;
        let m = &adj.masses;
        let k = m.len();
        let cuts = self.partition.cutpoints();
        let widths = self.partition.widths();
        // Gradient with respect to the refined masses.
        let mut g_m = vec![T::zero(); k];

        let mut loss = match self.fit {
            FitLoss::Jbce => {
                let mut cdf = Vec::with_capacity(k);
                let mut acc = s.lower_cdf;
                for &mk in m {
                    acc = acc + mk;
                    cdf.push(acc);
                }
                let (v, d_cdf) = jbce_terms(&cdf, &cuts[1..], y);
                // F(c_j) contains m_i for every i ≤ j.
                let mut suffix = T::zero();
                for j in (0..k).rev() {
                    suffix = suffix + d_cdf[j];
                    g_m[j] = suffix;
                }
                v
            }
            FitLoss::Nll => match self.partition.locate(y) {
                Some(j) => {
                    let (v, clamped) = clamped_neg_log_density(m[j] / widths[j]);
                    if !clamped {
                        g_m[j] = -m[j].recip();
                    }
                    v
                }
                None => clamped_neg_log_density(s.dist.pdf(y)).0,
            },
        };

        if self.weights.roughness > 0.0 {
            let alpha = T::c(self.weights.roughness);
            let levels: Vec<T> = m.iter().zip(&widths).map(|(&mk, &w)| mk / w).collect();
            let (v, d_levels) = roughness_terms(&levels);
            loss = loss + alpha * v;
            for j in 0..k {
                g_m[j] = g_m[j] + alpha * d_levels[j] / widths[j];
            }
        }

        if self.weights.mean > 0.0 {
            // E[Y] - μ = Σ m_k mid_k - ∫_{c₀}^{c_K} y f_β(y) dy, tails cancelling.
            let alpha = T::c(self.weights.mean);
            let half = T::c(0.5);
            let mids: Vec<T> = cuts.windows(2).map(|c| (c[0] + c[1]) * half).collect();
            let diff = m.iter().zip(&mids).map(|(&mk, &c)| mk * c).sum::<T>() - s.region_moment;
            loss = loss + alpha * diff * diff;
            for j in 0..k {
                g_m[j] = g_m[j] + alpha * T::c(2.0) * diff * mids[j];
            }
        }

        let mut g_l = softmax_pullback(m, r, &g_m);

        if self.weights.kl > 0.0 {
            // ∂/∂l_j of -Σ b_k ln a_k is m_j - b_j.
            let alpha = T::c(self.weights.kl);
            let kl: T = s
                .masses
                .iter()
                .zip(&adj.log_factors)
                .filter(|(&b, _)| b > T::zero())
                .map(|(&b, &la)| -b * la)
                .sum();
            loss = loss + alpha * kl;
            for j in 0..k {
                g_l[j] = g_l[j] + alpha * (m[j] - s.masses[j]);
            }
        }
        Ok((loss, g_l))
    }
}

impl<T: Scalar> OutputLoss<T> for DrnObjective<'_, T> {
    fn loss_and_grad(&self, outputs: ArrayView2<T>, rows: &[usize]) -> Result<(T, Array2<T>)> {
        check_sizes(outputs.nrows(), rows.len())?;
        let n = T::from_usize_lossy(rows.len());
        let mut grad = Array2::zeros(outputs.raw_dim());
        let mut total = T::zero();
        for (i, &row) in rows.iter().enumerate() {
            let logits = outputs.row(i).to_vec();
            let (v, g) = self.observation(&logits, row)?;
            total = total + v;
            for (dst, gj) in grad.row_mut(i).iter_mut().zip(g) {
                *dst = gj / n;
            }
        }
        Ok((total / n, grad))
    }
}
