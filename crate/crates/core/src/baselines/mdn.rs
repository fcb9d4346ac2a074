//! Gamma mixture density network.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{MlpParams, OutputLoss};
use crate::dist::{check_level, invert_cdf, ContinuousDist};
use crate::error::{DrnError, Result};
use crate::glm::GammaDist;
use crate::scalar::Scalar;
use crate::special::{digamma, log_sum_exp, sigmoid, softmax};

/// Mixture size of the fixed MDN configuration.
pub const MDN_COMPONENTS: usize = 10;

/// Map from raw outputs to positive shape and scale parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positive {
    #[default]
    Exp,
    Softplus,
}

impl Positive {
    fn apply<T: Scalar>(self, raw: T) -> T {
        match self {
            Positive::Exp => raw.exp(),
            Positive::Softplus => {
                if raw > T::c(30.0) {
                    raw
                } else {
                    raw.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative of `apply` at `raw`.
    fn slope<T: Scalar>(self, raw: T) -> T {
        match self {
            Positive::Exp => raw.exp(),
            Positive::Softplus => sigmoid(raw),
        }
    }
}

/// Finite mixture of gamma components.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMixture<T> {
    weights: Vec<T>,
    components: Vec<GammaDist<T>>,
}

impl<T: Scalar> GammaMixture<T> {
    pub fn new(weights: Vec<T>, components: Vec<GammaDist<T>>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(DrnError::Dimension {
                context: "mixture weights",
                expected: components.len(),
                found: weights.len(),
            });
        }
        Ok(Self { weights, components })
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn components(&self) -> &[GammaDist<T>] {
        &self.components
    }

    pub fn ln_pdf(&self, y: T) -> T {
        let terms: Vec<T> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(&w, c)| w.ln() + c.ln_pdf(y))
            .collect();
        log_sum_exp(&terms)
    }
}

impl<T: Scalar> ContinuousDist<T> for GammaMixture<T> {
    fn pdf(&self, y: T) -> T {
        self.ln_pdf(y).exp()
    }

    fn cdf(&self, y: T) -> T {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(&w, c)| w * c.cdf(y))
            .sum()
    }

    fn quantile(&self, alpha: T) -> Result<T> {
        check_level(alpha, "mixture quantile")?;
        Ok(invert_cdf(|y| self.cdf(y), |y| self.pdf(y), alpha, T::zero(), self.mean()))
    }

    fn mean(&self) -> T {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(&w, c)| w * c.mean())
            .sum()
    }
}

/// Outputs are laid out as `K` mixing logits, `K` raw shapes, `K` raw scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct MdnModel<T> {
    net: MlpParams<T>,
    components: usize,
    #[serde(default)]
    positive: Positive,
}

fn mixture_from_raw<T: Scalar>(raw: &[T], k: usize, positive: Positive) -> Result<GammaMixture<T>> {
    let weights = softmax(&raw[..k]);
    let components = (0..k)
        .map(|j| GammaDist::new(positive.apply(raw[k + j]), positive.apply(raw[2 * k + j])))
        .collect::<Result<Vec<_>>>()?;
    GammaMixture::new(weights, components)
}

impl<T: Scalar> MdnModel<T> {
    pub fn new(net: MlpParams<T>, components: usize, positive: Positive) -> Result<Self> {
        if components == 0 || net.output_dim() != 3 * components {
            return Err(DrnError::Dimension {
                context: "MDN network output",
                expected: 3 * components.max(1),
                found: net.output_dim(),
            });
        }
        Ok(Self {
            net,
            components,
            positive,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        n_features: usize,
        hidden: &[usize],
        components: usize,
        positive: Positive,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![n_features];
        sizes.extend_from_slice(hidden);
        sizes.push(3 * components);
        Self::new(MlpParams::init(&sizes, rng), components, positive)
    }

    pub fn net(&self) -> &MlpParams<T> {
        &self.net
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn positive(&self) -> Positive {
        self.positive
    }

    pub fn with_net(&self, net: MlpParams<T>) -> Result<Self> {
        Self::new(net, self.components, self.positive)
    }

    pub fn conditional(&self, x: &[T]) -> Result<GammaMixture<T>> {
        mixture_from_raw(&self.net.forward_one(x)?, self.components, self.positive)
    }
}

/// Summed mixture negative log-likelihood.
pub fn mdn_nll<T: Scalar>(mixtures: &[GammaMixture<T>], y: &[T]) -> Result<T> {
    if mixtures.len() != y.len() {
        return Err(DrnError::Dimension {
            context: "MDN batch",
            expected: mixtures.len(),
            found: y.len(),
        });
    }
    Ok(mixtures.iter().zip(y).map(|(m, &y)| -m.ln_pdf(y)).sum())
}

/// Batch-mean mixture NLL over raw MDN outputs.
#[derive(Debug, Clone, Copy)]
pub struct MdnObjective<'a, T> {
    pub y: &'a [T],
    pub components: usize,
    pub positive: Positive,
}

impl<T: Scalar> OutputLoss<T> for MdnObjective<'_, T> {
    fn loss_and_grad(&self, outputs: ArrayView2<T>, rows: &[usize]) -> Result<(T, Array2<T>)> {
        let k = self.components;
        let n = T::from_usize_lossy(rows.len());
        let mut grad = Array2::zeros(outputs.raw_dim());
        let mut total = T::zero();
        for (i, &r) in rows.iter().enumerate() {
            let raw = outputs.row(i).to_vec();
            let y = self.y[r];
            let pi = softmax(&raw[..k]);
            let shapes: Vec<T> = raw[k..2 * k].iter().map(|&v| self.positive.apply(v)).collect();
            let scales: Vec<T> = raw[2 * k..].iter().map(|&v| self.positive.apply(v)).collect();
            let log_terms: Vec<T> = (0..k)
                .map(|j| match GammaDist::new(shapes[j], scales[j]) {
                    Ok(c) => pi[j].ln() + c.ln_pdf(y),
                    Err(_) => T::nan(),
                })
                .collect();
            let lse = log_sum_exp(&log_terms);
            total = total - lse;
            let ln_y = y.ln();
            for j in 0..k {
                // Posterior responsibility of component j.
                let resp = (log_terms[j] - lse).exp();
                let (a, th) = (shapes[j], scales[j]);
                grad[[i, j]] = (pi[j] - resp) / n;
                let d_shape = ln_y - digamma(a) - th.ln();
                grad[[i, k + j]] = -resp * d_shape * self.positive.slope(raw[k + j]) / n;
                let d_scale = y / (th * th) - a / th;
                grad[[i, 2 * k + j]] = -resp * d_scale * self.positive.slope(raw[2 * k + j]) / n;
            }
        }
        Ok((total / n, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mixture() -> GammaMixture<f64> {
        GammaMixture::new(
            vec![0.3, 0.7],
            vec![GammaDist::new(2.0, 0.5).unwrap(), GammaDist::new(5.0, 0.8).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn single_component_is_plain_gamma() {
        let g = GammaDist::new(2.5, 0.6).unwrap();
        let m = GammaMixture::new(vec![1.0], vec![g]).unwrap();
        assert_abs_diff_eq!(mdn_nll(&[m], &[1.3]).unwrap(), -g.ln_pdf(1.3), epsilon = 1e-14);
    }

    #[test]
    fn duplicate_components_collapse() {
        let g = GammaDist::new(2.5, 0.6).unwrap();
        let m = GammaMixture::new(vec![0.5, 0.5], vec![g, g]).unwrap();
        assert_abs_diff_eq!(m.ln_pdf(0.9), g.ln_pdf(0.9), epsilon = 1e-14);
    }

    #[test]
    fn log_space_matches_direct_sum() {
        let m = mixture();
        for y in [0.1, 0.7, 2.0, 4.5, 9.0] {
            let direct: f64 = m
                .weights()
                .iter()
                .zip(m.components())
                .map(|(w, c)| w * c.pdf(y))
                .sum();
            assert_abs_diff_eq!(-m.ln_pdf(y), -direct.ln(), epsilon = 1e-10);
        }
    }

    #[test]
    fn mixture_queries() {
        let m = mixture();
        assert_abs_diff_eq!(m.mean(), 0.3 * 1.0 + 0.7 * 4.0, epsilon = 1e-14);
        let mut prev = 0.0;
        for i in 0..200 {
            let c = m.cdf(i as f64 * 0.06);
            assert!(c >= prev);
            prev = c;
        }
        for a in [0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((m.cdf(m.quantile(a).unwrap()) - a).abs() < 1e-9);
        }
        assert!(m.quantile(1.0).is_err());
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = MdnModel::<f64>::init(2, &[16], 10, Positive::Exp, &mut rng).unwrap();
        for i in 0..20 {
            let x = [i as f64 * 0.3 - 3.0, 1.5 - i as f64 * 0.1];
            let s: f64 = model.conditional(&x).unwrap().weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_is_positive() {
        assert!(Positive::Softplus.apply(-50.0f64) > 0.0);
        assert_eq!(Positive::Softplus.apply(100.0f64), 100.0);
        assert_abs_diff_eq!(Positive::Softplus.apply(0.0f64), 2f64.ln(), epsilon = 1e-15);
    }
}
