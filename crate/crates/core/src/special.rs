//! Special functions, evaluated in `f64` and cast back to the caller's scalar.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma as sg;

use crate::scalar::Scalar;

pub fn ln_gamma<T: Scalar>(x: T) -> T {
    T::c(sg::ln_gamma(x.f64()))
}

pub fn digamma<T: Scalar>(x: T) -> T {
    T::c(sg::digamma(x.f64()))
}

/// Regularized lower incomplete gamma P(a, x); 0 for x <= 0 and 1 at +inf.
pub fn gamma_p<T: Scalar>(a: T, x: T) -> T {
    let (a, x) = (a.f64(), x.f64());
    if x <= 0.0 {
        return T::zero();
    }
    if x.is_infinite() {
        return T::one();
    }
    T::c(sg::gamma_lr(a, x))
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), without cancellation.
pub fn gamma_q<T: Scalar>(a: T, x: T) -> T {
    let (a, x) = (a.f64(), x.f64());
    if x <= 0.0 {
        return T::one();
    }
    if x.is_infinite() {
        return T::zero();
    }
    T::c(sg::gamma_ur(a, x))
}

pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of the standard normal CDF, polished with Newton steps.
pub fn std_normal_quantile(p: f64) -> f64 {
    let mut z = Normal::standard().inverse_cdf(p);
    if z.is_finite() {
        for _ in 0..2 {
            let pdf = std_normal_pdf(z);
            if pdf <= 0.0 {
                break;
            }
            z -= (std_normal_cdf(z) - p) / pdf;
        }
    }
    z
}

/// log(sum(exp(xs))) without overflow; -inf for an empty or all -inf slice.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let sum: T = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_quantile_round_trips() {
        let p = std_normal_cdf(1.96);
        assert_abs_diff_eq!(std_normal_quantile(p), 1.96, epsilon = 1e-12);
        assert_abs_diff_eq!(std_normal_quantile(0.5), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn incomplete_gamma_matches_erlang() {
        let e2 = (-2.0f64).exp();
        assert_abs_diff_eq!(gamma_p(2.0, 2.0), 1.0 - 3.0 * e2, epsilon = 1e-14);
        assert_abs_diff_eq!(gamma_q(2.0, 2.0), 3.0 * e2, epsilon = 1e-14);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[100.3, 98.8, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn simpson_integrates_smooth_functions() {
        let v = adaptive_simpson(&|x: f64| (-2.0 * x).exp(), 0.0, 30.0, 1e-12);
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-10);
    }
}
