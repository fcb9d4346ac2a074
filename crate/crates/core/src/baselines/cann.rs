//! Combined actuarial neural network: a GLM nested inside a network through
//! a learned credibility blend of linear predictors.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{MlpParams, OutputLoss};
use crate::error::{DrnError, Result};
use crate::glm::{GammaDist, GammaGlmModel};
use crate::scalar::Scalar;
use crate::special::sigmoid;

/// Initial bias of the credibility head; sigmoid(3) ≈ 0.95 starts near the GLM.
pub const CREDIBILITY_BIAS: f64 = 3.0;

/// Network output 0 is the raw credibility, output 1 the raw adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct CannModel<T> {
    glm: GammaGlmModel<T>,
    net: MlpParams<T>,
}

/// `(η, α)` from the GLM linear predictor and the two raw outputs.
fn blend<T: Scalar>(glm_eta: T, raw_alpha: T, raw_adj: T) -> (T, T) {
    let alpha = sigmoid(raw_alpha);
    (alpha * glm_eta + (T::one() - alpha) * raw_adj, alpha)
}

impl<T: Scalar> CannModel<T> {
    pub fn new(glm: GammaGlmModel<T>, net: MlpParams<T>) -> Result<Self> {
        if net.output_dim() != 2 {
            return Err(DrnError::Dimension {
                context: "CANN network output",
                expected: 2,
                found: net.output_dim(),
            });
        }
        if net.input_dim() != glm.n_features() {
            return Err(DrnError::Dimension {
                context: "CANN network input",
                expected: glm.n_features(),
                found: net.input_dim(),
            });
        }
        Ok(Self { glm, net })
    }

    pub fn init<R: Rng + ?Sized>(glm: GammaGlmModel<T>, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![glm.n_features()];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let mut net = MlpParams::init(&sizes, rng);
        let last = net.biases.len() - 1;
        net.biases[last][0] = T::c(CREDIBILITY_BIAS);
        Self::new(glm, net)
    }

    pub fn glm(&self) -> &GammaGlmModel<T> {
        &self.glm
    }

    pub fn net(&self) -> &MlpParams<T> {
        &self.net
    }

    pub fn with_net(&self, net: MlpParams<T>) -> Result<Self> {
        Self::new(self.glm.clone(), net)
    }

    fn eta_alpha(&self, x: &[T]) -> Result<(T, T)> {
        let out = self.net.forward_one(x)?;
        Ok(blend(self.glm.linear_predictor(x)?, out[0], out[1]))
    }

    /// Credibility weight on the GLM linear predictor.
    pub fn credibility(&self, x: &[T]) -> Result<T> {
        Ok(self.eta_alpha(x)?.1)
    }

    pub fn mean(&self, x: &[T]) -> Result<T> {
        Ok(self.eta_alpha(x)?.0.exp())
    }

    /// Gamma with the CANN mean and the GLM dispersion.
    pub fn conditional(&self, x: &[T]) -> Result<GammaDist<T>> {
        GammaDist::from_mean_dispersion(self.mean(x)?, self.glm.phi)
    }
}

/// Gamma unit deviance `2[(y - μ)/μ - ln(y/μ)]`.
pub fn gamma_unit_deviance<T: Scalar>(y: T, mu: T) -> T {
    T::c(2.0) * ((y - mu) / mu - (y / mu).ln())
}

/// Summed gamma deviance over a batch.
pub fn cann_loss<T: Scalar>(y: &[T], mu: &[T]) -> Result<T> {
    if y.len() != mu.len() {
        return Err(DrnError::Dimension {
            context: "deviance batch",
            expected: y.len(),
            found: mu.len(),
        });
    }
    Ok(y.iter().zip(mu).map(|(&y, &m)| gamma_unit_deviance(y, m)).sum())
}

/// Batch-mean gamma deviance over raw CANN outputs.
#[derive(Debug, Clone, Copy)]
pub struct CannObjective<'a, T> {
    /// GLM linear predictor of every dataset row.
    pub glm_eta: &'a [T],
    pub y: &'a [T],
}

impl<T: Scalar> OutputLoss<T> for CannObjective<'_, T> {
    fn loss_and_grad(&self, outputs: ArrayView2<T>, rows: &[usize]) -> Result<(T, Array2<T>)> {
        let n = T::from_usize_lossy(rows.len());
        let two = T::c(2.0);
        let mut grad = Array2::zeros(outputs.raw_dim());
        let mut total = T::zero();
        for (i, &r) in rows.iter().enumerate() {
            let (raw_alpha, raw_adj) = (outputs[[i, 0]], outputs[[i, 1]]);
            let (eta, alpha) = blend(self.glm_eta[r], raw_alpha, raw_adj);
            let mu = eta.exp();
            let y = self.y[r];
            total = total + gamma_unit_deviance(y, mu);
            // dD/dη = 2(1 - y/μ).
            let d_eta = two * (T::one() - y / mu) / n;
            grad[[i, 0]] = d_eta * alpha * (T::one() - alpha) * (self.glm_eta[r] - raw_adj);
            grad[[i, 1]] = d_eta * (T::one() - alpha);
        }
        Ok((total / n, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ContinuousDist;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn glm() -> GammaGlmModel<f64> {
        GammaGlmModel::new(vec![0.2, 0.5, -0.3], 0.4, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn credibility_extremes() {
        let x = [0.3, -0.7];
        let mut net = MlpParams::zeros(&[2, 4, 2]);
        net.biases[1][0] = 40.0;
        net.biases[1][1] = 1.5;
        let m = CannModel::new(glm(), net.clone()).unwrap();
        assert_abs_diff_eq!(m.mean(&x).unwrap(), glm().mean(&x).unwrap(), epsilon = 1e-12);
        net.biases[1][0] = -40.0;
        let m = CannModel::new(glm(), net).unwrap();
        assert_abs_diff_eq!(m.mean(&x).unwrap(), 1.5f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn saturated_credibility_reproduces_glm() {
        let mut net = MlpParams::zeros(&[2, 4, 2]);
        net.biases[1][0] = 10.0;
        let m = CannModel::new(glm(), net).unwrap();
        for x in [[0.0, 0.0], [1.0, -1.0], [-0.5, 0.25]] {
            let rel = (m.mean(&x).unwrap() / glm().mean(&x).unwrap() - 1.0).abs();
            assert!(rel < 1e-4);
        }
        assert_eq!(m.conditional(&[0.0, 0.0]).unwrap().shape(), 1.0 / 0.4);
    }

    #[test]
    fn init_starts_near_glm() {
        let m = CannModel::init(glm(), &[8], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let a = m.credibility(&[0.1, 0.2]).unwrap();
        assert!(a > 0.8 && a < 1.0);
        assert!(m.conditional(&[0.1, 0.2]).unwrap().mean() > 0.0);
    }

    #[test]
    fn deviance_examples() {
        assert_eq!(cann_loss(&[1.0, 2.5], &[1.0, 2.5]).unwrap(), 0.0);
        let v = cann_loss(&[1.0], &[2.0]).unwrap();
        assert_abs_diff_eq!(v, 2.0 * (-0.5 - 0.5f64.ln()), epsilon = 1e-14);
        assert_abs_diff_eq!(v, 0.386294, epsilon = 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let y: f64 = rng.random_range(0.01..10.0);
            let mu: f64 = rng.random_range(0.01..10.0);
            assert!(gamma_unit_deviance(y, mu) >= 0.0);
        }
    }
}
