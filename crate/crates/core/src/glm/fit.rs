//! Gamma GLM with log link, fitted by iteratively reweighted least squares.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffengine::solve_spd;
use crate::error::{DrnError, Result};
use crate::glm::gamma::GammaDist;
use crate::scalar::Scalar;

/// Convergence threshold on `max |Δβ|`.
pub const IRLS_TOL: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 100;

/// Fitted gamma GLM: `μ(x) = exp(β₀ + Σ βⱼ xⱼ)` with constant dispersion `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaGlmModel<T> {
    /// Intercept first.
    pub beta: Vec<T>,
    #[serde(rename = "dispersion")]
    pub phi: T,
    #[serde(rename = "features")]
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct GlmFit<T> {
    pub model: GammaGlmModel<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> GammaGlmModel<T> {
    pub fn new(beta: Vec<T>, phi: T, feature_names: Vec<String>) -> Result<Self> {
        if !(phi > T::zero() && phi.is_finite()) {
            return Err(DrnError::invalid("dispersion must be positive and finite"));
        }
        if beta.is_empty() || beta.iter().any(|b| !b.is_finite()) {
            return Err(DrnError::invalid("coefficients must be finite, intercept included"));
        }
        if feature_names.len() + 1 != beta.len() {
            return Err(DrnError::Dimension {
                context: "GLM feature names",
                expected: beta.len() - 1,
                found: feature_names.len(),
            });
        }
        Ok(Self {
            beta,
            phi,
            feature_names,
        })
    }

    pub fn n_features(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn linear_predictor(&self, x: &[T]) -> Result<T> {
        if x.len() != self.n_features() {
            return Err(DrnError::Dimension {
                context: "GLM features",
                expected: self.n_features(),
                found: x.len(),
            });
        }
        Ok(self.beta[0]
            + self.beta[1..]
                .iter()
                .zip(x)
                .map(|(&b, &v)| b * v)
                .sum::<T>())
    }

    pub fn mean(&self, x: &[T]) -> Result<T> {
        Ok(self.linear_predictor(x)?.exp())
    }

    /// Conditional gamma distribution of `Y | x`.
    pub fn conditional(&self, x: &[T]) -> Result<GammaDist<T>> {
        GammaDist::from_mean_dispersion(self.mean(x)?, self.phi)
    }

    pub fn conditional_batch(&self, xs: ArrayView2<T>) -> Result<Vec<GammaDist<T>>> {
        xs.rows()
            .into_iter()
            .map(|row| self.conditional(&row.to_vec()))
            .collect()
    }
}

fn with_intercept<T: Scalar>(x: ArrayView2<T>) -> Array2<T> {
    let mut design = Array2::<T>::ones((x.nrows(), x.ncols() + 1));
    design.slice_mut(ndarray::s![.., 1..]).assign(&x);
    design
}

fn gamma_deviance<T: Scalar>(y: ArrayView1<T>, mu: &Array1<T>) -> T {
    y.iter()
        .zip(mu)
        .map(|(&y, &m)| T::c(2.0) * ((y - m) / m - (y / m).ln()))
        .sum()
}

/// Fits the gamma GLM by IRLS (Fisher scoring). With the log link and
/// `V(μ) = μ²` the working weights `(dμ/dη)²/V(μ)` are identically one.
pub fn fit_gamma_glm<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    feature_names: Vec<String>,
) -> Result<GlmFit<T>> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(DrnError::Dimension {
            context: "GLM response",
            expected: n,
            found: y.len(),
        });
    }
    if feature_names.len() != p {
        return Err(DrnError::Dimension {
            context: "GLM feature names",
            expected: p,
            found: feature_names.len(),
        });
    }
    if let Some(bad) = y.iter().find(|v| !(**v > T::zero() && v.is_finite())) {
        return Err(DrnError::invalid(format!(
            "gamma GLM requires positive finite responses, found {bad}"
        )));
    }
    if n <= p + 1 {
        return Err(DrnError::invalid(format!(
            "gamma GLM needs more observations ({n}) than parameters plus one ({})",
            p + 2
        )));
    }
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        if col.iter().all(|v| *v == T::zero()) {
            return Err(DrnError::invalid(format!(
                "design column `{}` is identically zero",
                feature_names[j]
            )));
        }
    }

    let design = with_intercept(x);
    let mean_y = y.sum() / T::from_usize_lossy(n);
    let mut beta = Array1::<T>::zeros(p + 1);
    beta[0] = mean_y.ln();
    let mut mu = design.dot(&beta).mapv(T::exp);
    let mut deviance = gamma_deviance(y, &mu);

    let mut converged = false;
    let mut iterations = 0;
    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let eta = design.dot(&beta);
        // d mu / d eta = mu for the log link.
        let weights = mu.mapv(|m| (m * m) / (m * m));
        let z = &eta + &((&y - &mu) / &mu);
        let weighted = &design * &weights.view().insert_axis(Axis(1));
        let xtwx = design.t().dot(&weighted);
        let xtwz = weighted.t().dot(&z);
        let proposal = solve_spd(&xtwx, &xtwz, "gamma GLM IRLS")?;

        // Step halving keeps the deviance from increasing on awkward starts.
        let mut step = T::one();
        let mut next = proposal.clone();
        let mut next_mu = design.dot(&next).mapv(T::exp);
        let mut next_dev = gamma_deviance(y, &next_mu);
        let mut halvings = 0;
        while !(next_dev.is_finite() && next_dev <= deviance * (T::one() + T::c(1e-12)))
            && halvings < 30
        {
            step = step * T::c(0.5);
            next = &beta + &((&proposal - &beta) * step);
            next_mu = design.dot(&next).mapv(T::exp);
            next_dev = gamma_deviance(y, &next_mu);
            halvings += 1;
        }

        let delta = (&next - &beta)
            .iter()
            .fold(T::zero(), |acc, d| acc.max(d.abs()));
        beta = next;
        mu = next_mu;
        deviance = next_dev;
        if delta < T::c(IRLS_TOL) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("gamma GLM IRLS did not converge in {IRLS_MAX_ITER} iterations");
    }

    let dof = T::from_usize_lossy(n - p - 1);
    let pearson: T = y
        .iter()
        .zip(&mu)
        .map(|(&y, &m)| ((y - m) / m).powi(2))
        .sum();
    let model = GammaGlmModel::new(beta.to_vec(), pearson / dof, feature_names)?;
    Ok(GlmFit {
        model,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ContinuousDist;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn intercept_only_recovers_sample_mean() {
        let x = Array2::<f64>::zeros((3, 0));
        let y = array![1.0, 2.0, 3.0];
        let fit = fit_gamma_glm(x.view(), y.view(), vec![]).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.model.beta[0], 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(fit.model.phi, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = array![1.0, -2.0, 3.0, 1.0];
        assert!(matches!(
            fit_gamma_glm(x.view(), y.view(), vec!["a".into()]),
            Err(DrnError::Validation(_))
        ));
        let zero = array![[0.0], [0.0], [0.0], [0.0]];
        let y = array![1.0, 2.0, 3.0, 1.0];
        assert!(fit_gamma_glm(zero.view(), y.view(), vec!["a".into()]).is_err());
        let collinear = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0], [5.0, 10.0]];
        let y = array![1.0, 2.0, 3.0, 1.0, 2.0];
        assert!(matches!(
            fit_gamma_glm(collinear.view(), y.view(), vec!["a".into(), "b".into()]),
            Err(DrnError::RankDeficient(_))
        ));
    }

    #[test]
    fn conditional_distribution_parameters() {
        let m = GammaGlmModel::new(vec![0.0, 2f64.ln()], 0.5, vec!["x".into()]).unwrap();
        let d = m.conditional(&[1.0]).unwrap();
        assert_abs_diff_eq!(d.shape(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.scale(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.mean(), 2.0, epsilon = 1e-15);
        let unit = GammaGlmModel::new(vec![0.0], 1.0, vec![]).unwrap();
        let e = unit.conditional(&[]).unwrap();
        assert_eq!((e.shape(), e.scale()), (1.0, 1.0));
        assert!(m.conditional(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn json_layout() {
        let m = GammaGlmModel::new(vec![0.5, -1.0], 0.25, vec!["x1".into()]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, r#"{"beta":[0.5,-1.0],"dispersion":0.25,"features":["x1"]}"#);
        let back: GammaGlmModel<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
