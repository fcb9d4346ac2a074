//! Simulated datasets with known conditional distributions.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::datagen::{Dataset, SplitTag, Splits};
use crate::dist::{check_level, invert_cdf, ContinuousDist};
use crate::error::{DrnError, Result};
use crate::special::{adaptive_simpson, ln_gamma, std_normal_cdf};

pub const MAIN_SD: f64 = 0.25;
pub const MAIN_CORRELATION: f64 = 0.25;
pub const MAIN_SIZES: (usize, usize, usize) = (12_000, 4_000, 4_000);
pub const REG_SIZE: usize = 40_000;
pub const REG_SD: f64 = 0.5;
/// Added to the regularisation-study response so a gamma baseline applies.
pub const REG_RESPONSE_SHIFT: f64 = 10.0;

/// `μ(x) = exp(-x₁ + x₂)`.
pub fn main_mean(x1: f64, x2: f64) -> f64 {
    (-x1 + x2).exp()
}

/// `φ(x) = exp(x₁) / (1 + exp(x₁x₂))`.
pub fn main_dispersion(x1: f64, x2: f64) -> f64 {
    x1.exp() / (1.0 + (x1 * x2).exp())
}

fn names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("X_{j}")).collect()
}

/// Gamma plus lognormal responses over correlated normal features.
///
/// `Y = G + L` with `G ~ Gamma(shape 1/φ, scale μφ)` and `ln L ~ N(ln μ, φ²)`:
/// the lognormal's second parameter is its log-scale standard deviation.
pub fn gen_synthetic_main(n_train: usize, n_val: usize, n_test: usize, seed: u64) -> Result<Splits> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(DrnError::invalid("split sizes must be positive"));
    }
    let n = n_train + n_val + n_test;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    let rho_c = (1.0 - MAIN_CORRELATION * MAIN_CORRELATION).sqrt();
    for i in 0..n {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let x1 = MAIN_SD * z1;
        let x2 = MAIN_SD * (MAIN_CORRELATION * z1 + rho_c * z2);
        let (mu, phi) = (main_mean(x1, x2), main_dispersion(x1, x2));
        let g = Gamma::new(1.0 / phi, mu * phi)
            .expect("positive gamma parameters")
            .sample(&mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        let l = (mu.ln() + phi * z).exp();
        x[[i, 0]] = x1;
        x[[i, 1]] = x2;
        y.push(g + l);
    }
    let all = Dataset::new(x, y, names(2), SplitTag::Full, seed)?;
    Ok(all.split_sequential(n_train, n_val))
}

/// Heteroskedastic normal responses, `Y | X ~ N(-X₁ + X₂, (0.5(X₁² + X₂²))²)`.
pub fn gen_synthetic_reg(n: usize, seed: u64) -> Result<Splits> {
    if n < 5 {
        return Err(DrnError::invalid("need at least five rows to split 60/20/20"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let (x1, x2) = (REG_SD * z1, REG_SD * z2);
        let z: f64 = StandardNormal.sample(&mut rng);
        x[[i, 0]] = x1;
        x[[i, 1]] = x2;
        y.push(-x1 + x2 + 0.5 * (x1 * x1 + x2 * x2) * z);
    }
    let all = Dataset::new(x, y, names(2), SplitTag::Full, seed)?;
    let n_train = n * 3 / 5;
    let n_val = n / 5;
    Ok(all.split_sequential(n_train, n_val))
}

/// Conditional mean and sd of the heteroskedastic generator.
pub fn reg_moments(x1: f64, x2: f64) -> (f64, f64) {
    (-x1 + x2, 0.5 * (x1 * x1 + x2 * x2))
}

/// Exact law of `Y | X = x` for the gamma plus lognormal generator, by
/// numerical convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueConditional {
    mu: f64,
    phi: f64,
}

const CONVOLUTION_TOL: f64 = 1e-9;

impl TrueConditional {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self {
            mu: main_mean(x1, x2),
            phi: main_dispersion(x1, x2),
        }
    }

    fn lognormal_pdf(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        let z = (v.ln() - self.mu.ln()) / self.phi;
        (-0.5 * z * z).exp() / (v * self.phi * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn lognormal_cdf(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        std_normal_cdf((v.ln() - self.mu.ln()) / self.phi)
    }

    /// `∫₀^y f_G(g) h(y - g) dg`, with `g = t^{1/k}` removing the gamma
    /// density's singularity at zero.
    fn convolve<H: Fn(f64) -> f64>(&self, y: f64, h: H) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let k = 1.0 / self.phi;
        let theta = self.mu * self.phi;
        let log_norm = -ln_gamma(k) - k * theta.ln() - k.ln();
        let integrand = |t: f64| {
            let g = t.powf(1.0 / k).min(y);
            (log_norm - g / theta).exp() * h(y - g)
        };
        // The gamma factor is negligible beyond a high quantile of G.
        let g_max = y.min(theta * (k + 40.0 * k.sqrt() + 40.0));
        adaptive_simpson(&integrand, 0.0, g_max.powf(k), CONVOLUTION_TOL)
    }
}

impl ContinuousDist<f64> for TrueConditional {
    fn pdf(&self, y: f64) -> f64 {
        self.convolve(y, |v| self.lognormal_pdf(v))
    }

    fn cdf(&self, y: f64) -> f64 {
        if y == f64::INFINITY {
            return 1.0;
        }
        self.convolve(y, |v| self.lognormal_cdf(v)).min(1.0)
    }

    fn quantile(&self, alpha: f64) -> Result<f64> {
        check_level(alpha, "true conditional quantile")?;
        Ok(invert_cdf(|y| self.cdf(y), |y| self.pdf(y), alpha, 0.0, self.mean()))
    }

    fn mean(&self) -> f64 {
        self.mu * (1.0 + (0.5 * self.phi * self.phi).exp())
    }
}
