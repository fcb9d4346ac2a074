//! Scoring rules, calibration diagnostics and paired significance tests.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::ContinuousDist;
use crate::error::{DrnError, Result};
use crate::special::{std_normal_cdf, std_normal_quantile};

/// Quantile level of the reported quantile loss.
pub const DEFAULT_QL_LEVEL: f64 = 0.9;
/// PIT values are clamped this far inside `(0, 1)` before the normal inverse.
pub const PIT_CLAMP: f64 = 1e-10;
/// Largest effective sample for which the signed-rank null is enumerated.
pub const WILCOXON_EXACT_MAX: usize = 25;
pub const WILCOXON_MIN_LEN: usize = 10;

pub fn crps<D: ContinuousDist<f64> + ?Sized>(dist: &D, y: f64) -> f64 {
    dist.crps(y)
}

/// `-ln f(y)`, which is `+∞` where the density vanishes.
pub fn nll<D: ContinuousDist<f64> + ?Sized>(dist: &D, y: f64) -> f64 {
    let p = dist.pdf(y);
    if p > 0.0 {
        -p.ln()
    } else {
        f64::INFINITY
    }
}

pub fn rmse(predictions: &[f64], observations: &[f64]) -> Result<f64> {
    check_paired(predictions.len(), observations.len())?;
    if predictions.is_empty() {
        return Err(DrnError::invalid("RMSE of an empty sample"));
    }
    let sse: f64 = predictions
        .iter()
        .zip(observations)
        .map(|(p, y)| (y - p).powi(2))
        .sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// Pinball loss `(y - q)(α - 1{y ≤ q})`.
pub fn quantile_loss(q: f64, y: f64, alpha: f64) -> f64 {
    let below = if y <= q { 1.0 } else { 0.0 };
    (y - q) * (alpha - below)
}

fn check_paired(n: usize, m: usize) -> Result<()> {
    if n != m {
        return Err(DrnError::Dimension {
            context: "paired samples",
            expected: n,
            found: m,
        });
    }
    Ok(())
}

pub fn pit_values<D: ContinuousDist<f64> + Sync>(dists: &[D], y: &[f64]) -> Result<Vec<f64>> {
    check_paired(dists.len(), y.len())?;
    Ok(dists
        .par_iter()
        .zip(y)
        .map(|(d, &v)| d.cdf(v).clamp(0.0, 1.0))
        .collect())
}

/// `Φ⁻¹(u)` with `u` clamped to `[1e-10, 1 - 1e-10]`.
pub fn quantile_residuals(pit: &[f64]) -> Vec<f64> {
    pit.iter()
        .map(|&u| std_normal_quantile(u.clamp(PIT_CLAMP, 1.0 - PIT_CLAMP)))
        .collect()
}

/// Sorted residuals against normal plotting positions `Φ⁻¹((i - ½)/n)`.
pub fn qq_pairs(residuals: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| (std_normal_quantile((i as f64 + 0.5) / n), r))
        .collect()
}

/// Nominal levels `0.01, 0.02, …, 0.99`.
pub fn calibration_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

/// `(p, fraction of PIT values ≤ p)` for each nominal level.
pub fn calibration_curve(pit: &[f64], levels: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = pit.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len().max(1) as f64;
    levels
        .iter()
        .map(|&p| (p, sorted.partition_point(|&u| u <= p) as f64 / n))
        .collect()
}

/// Mean squared gap between empirical and nominal coverage on the 99-level grid.
pub fn calibration_score(pit: &[f64]) -> f64 {
    let curve = calibration_curve(pit, &calibration_grid());
    curve.iter().map(|(p, e)| (e - p).powi(2)).sum::<f64>() / curve.len() as f64
}

/// Kolmogorov–Smirnov distance of a sample from the uniform law on `[0, 1]`.
pub fn ks_uniform(u: &[f64]) -> f64 {
    let mut sorted = u.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).max((i + 1) as f64 / n - v))
        .fold(0.0, f64::max)
}

/// Average ranks (1-based) of `|d|`, ties sharing the mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// One-sided Wilcoxon signed-rank p-value for the alternative that `a`
/// tends to be smaller than `b`.
///
/// Zero differences are dropped. The null distribution is enumerated when at
/// most 25 differences remain and approximated by a tie-corrected normal with
/// continuity correction otherwise.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    check_paired(a.len(), b.len())?;
    if a.len() < WILCOXON_MIN_LEN {
        return Err(DrnError::invalid(format!(
            "signed-rank test needs at least {WILCOXON_MIN_LEN} pairs, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(DrnError::invalid("signed-rank test on non-finite scores"));
    }
    if diffs.is_empty() {
        return Err(DrnError::UndefinedTest("every paired difference is zero".into()));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let n = diffs.len();
    if n <= WILCOXON_EXACT_MAX {
        return Ok(exact_lower_tail(&ranks, w_plus));
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    for group in sorted.chunk_by(|x, y| x == y) {
        let t = group.len() as f64;
        ties += t * t * t - t;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    Ok(std_normal_cdf((w_plus - mean + 0.5) / var.sqrt()))
}

/// `P(W⁺ ≤ w)` under random signs, by dynamic programming over doubled ranks.
fn exact_lower_tail(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let limit = (2.0 * w_plus).round() as usize;
    let hits: f64 = counts[..=limit.min(total)].iter().sum();
    hits / 2f64.powi(ranks.len() as i32)
}

/// `*`, `**` or `***` for p below 0.05, 0.01 or 0.001.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// JSON numbers cannot be infinite; non-finite scores are written as strings.
mod lenient {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("not a number: {other}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|&x| to_repr(x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}

/// Per-observation scores of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationScores {
    pub crps: Vec<f64>,
    #[serde(with = "lenient::vec")]
    pub nll: Vec<f64>,
    pub squared_error: Vec<f64>,
    pub quantile_loss: Vec<f64>,
}

/// Aggregate scores of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    #[serde(with = "lenient")]
    pub nll: f64,
    pub crps: f64,
    pub rmse: f64,
    pub ql: f64,
    pub ql_level: f64,
    pub observations: ObservationScores,
}

/// Aggregate scores without the per-observation vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    #[serde(with = "lenient")]
    pub nll: f64,
    pub crps: f64,
    pub rmse: f64,
    pub ql: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ModelScores {
    pub fn from_observations(observations: ObservationScores, ql_level: f64) -> Self {
        Self {
            nll: mean(&observations.nll),
            crps: mean(&observations.crps),
            rmse: mean(&observations.squared_error).sqrt(),
            ql: mean(&observations.quantile_loss),
            ql_level,
            observations,
        }
    }

    pub fn summary(&self) -> ScoreSummary {
        ScoreSummary {
            nll: self.nll,
            crps: self.crps,
            rmse: self.rmse,
            ql: self.ql,
        }
    }
}

/// Scores a batch of predictive distributions.
pub fn score<D: ContinuousDist<f64> + Sync>(dists: &[D], y: &[f64], ql_level: f64) -> Result<ModelScores> {
    check_paired(dists.len(), y.len())?;
    if y.is_empty() {
        return Err(DrnError::invalid("cannot score an empty split"));
    }
    let rows: Vec<(f64, f64, f64, f64)> = dists
        .par_iter()
        .zip(y)
        .map(|(d, &v)| -> Result<_> {
            let q = d.quantile(ql_level)?;
            Ok((d.crps(v), nll(d, v), (v - d.mean()).powi(2), quantile_loss(q, v, ql_level)))
        })
        .collect::<Result<_>>()?;
    let observations = ObservationScores {
        crps: rows.iter().map(|r| r.0).collect(),
        nll: rows.iter().map(|r| r.1).collect(),
        squared_error: rows.iter().map(|r| r.2).collect(),
        quantile_loss: rows.iter().map(|r| r.3).collect(),
    };
    Ok(ModelScores::from_observations(observations, ql_level))
}

/// One-sided p-values of a model against a reference, metric by metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference: String,
    pub p_values: BTreeMap<String, Option<f64>>,
    pub stars: BTreeMap<String, String>,
}

/// Tests whether `model` scores lower than `reference` on each metric.
///
/// Metrics with an undefined test (identical or non-finite scores) get no
/// p-value and no stars.
pub fn compare(model: &ModelScores, reference: &ModelScores, reference_name: &str) -> Comparison {
    let pairs = [
        ("nll", &model.observations.nll, &reference.observations.nll),
        ("crps", &model.observations.crps, &reference.observations.crps),
        ("rmse", &model.observations.squared_error, &reference.observations.squared_error),
        ("ql", &model.observations.quantile_loss, &reference.observations.quantile_loss),
    ];
    let mut p_values = BTreeMap::new();
    let mut stars = BTreeMap::new();
    for (name, a, b) in pairs {
        let p = wilcoxon_signed_rank(a, b).ok();
        stars.insert(name.to_string(), p.map_or("", significance_stars).to_string());
        p_values.insert(name.to_string(), p);
    }
    Comparison {
        reference: reference_name.to_string(),
        p_values,
        stars,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::GammaDist;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_exponential_crps_at_zero() {
        let d = GammaDist::new(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(crps(&d, 0.0), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn nll_examples() {
        let d = GammaDist::new(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(nll(&d, 1.0), 1.0, epsilon = 1e-14);
        assert_eq!(nll(&d, -1.0), f64::INFINITY);
    }

    #[test]
    fn rmse_and_pinball() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert_abs_diff_eq!(quantile_loss(1.0, 2.0, 0.9), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(quantile_loss(1.0, 0.5, 0.9), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn residual_examples() {
        let r = quantile_residuals(&[0.5, std_normal_cdf(1.96), 0.0, 1.0]);
        assert_abs_diff_eq!(r[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 1.96, epsilon = 1e-9);
        assert!(r[2].is_finite() && r[3].is_finite() && r[2] < -6.0 && r[3] > 6.0);
        let qq = qq_pairs(&[0.3, -1.0, 2.0]);
        assert_eq!(qq.iter().map(|p| p.1).collect::<Vec<_>>(), vec![-1.0, 0.3, 2.0]);
        assert_abs_diff_eq!(qq[1].0, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn calibration_examples() {
        let n = 4000;
        let grid: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        assert!(calibration_score(&grid) < 1e-4);
        let spike = vec![0.5; 100];
        let curve = calibration_curve(&spike, &[0.49, 0.5, 0.51]);
        assert_eq!(curve, vec![(0.49, 0.0), (0.5, 1.0), (0.51, 1.0)]);
        assert!(calibration_score(&spike) > 0.08);
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn wilcoxon_extremes() {
        let b: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() + 2.0).collect();
        let a: Vec<f64> = b.iter().map(|v| v - 1.0).collect();
        assert!(wilcoxon_signed_rank(&a, &b).unwrap() < 1e-6);
        assert!(wilcoxon_signed_rank(&b, &a).unwrap() > 0.999);
        assert!(matches!(wilcoxon_signed_rank(&b, &b), Err(DrnError::UndefinedTest(_))));
        assert!(wilcoxon_signed_rank(&a[..5], &b[..5]).is_err());
    }

    #[test]
    fn wilcoxon_exact_matches_enumeration() {
        // Ten pairs, two of them tied, leave eight differences with one tie.
        let d = [0.3, -1.2, 0.0, 0.8, -0.3, 2.5, -0.1, 0.0, -0.7, 1.9];
        let b = vec![1.0; 10];
        let a: Vec<f64> = d.iter().map(|x| x + 1.0).collect();
        let p = wilcoxon_signed_rank(&a, &b).unwrap();
        let nz: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
        let ranks = average_ranks(&nz.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let observed: f64 = nz.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        let mut hits = 0;
        for mask in 0u32..256 {
            let w: f64 = (0..8).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= observed + 1e-9 {
                hits += 1;
            }
        }
        assert_abs_diff_eq!(p, hits as f64 / 256.0, epsilon = 1e-10);
    }

    #[test]
    fn normal_approximation_near_exact_at_boundary() {
        let d: Vec<f64> = (1..=26).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 * 0.5 }).collect();
        let zero = vec![0.0; 26];
        let approx_p = wilcoxon_signed_rank(&zero, &d).unwrap();
        let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        let w: f64 = neg.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
        assert!((approx_p - exact_lower_tail(&ranks, w)).abs() < 0.01);
    }

    #[test]
    fn stars() {
        assert_eq!(significance_stars(0.0005), "***");
        assert_eq!(significance_stars(0.005), "**");
        assert_eq!(significance_stars(0.04), "*");
        assert_eq!(significance_stars(0.2), "");
    }

    #[test]
    fn report_round_trips_infinite_nll() {
        let obs = ObservationScores {
            crps: vec![0.1, 0.3],
            nll: vec![1.0, f64::INFINITY],
            squared_error: vec![1.0, 4.0],
            quantile_loss: vec![0.2, 0.4],
        };
        let s = ModelScores::from_observations(obs, 0.9);
        assert_eq!(s.nll, f64::INFINITY);
        assert_abs_diff_eq!(s.rmse, 2.5f64.sqrt());
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"inf\""));
        let back: ModelScores = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
