//! Kernel SHAP attributions of distributional properties.
//!
//! Value functions are marginal: features outside a coalition are filled in
//! from background rows drawn independently of the explained instance, so
//! attributions for correlated features should be read with care.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffengine::solve_spd;
use crate::dist::ContinuousDist;
use crate::error::{DrnError, Result};
use crate::models::FittedModel;

/// Largest player count for which every coalition is enumerated.
pub const EXACT_MAX_PLAYERS: usize = 13;
pub const DEFAULT_BACKGROUND: usize = 100;
pub const DEFAULT_COALITION_SAMPLES: usize = 4096;

/// Distributional property being explained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Target {
    Mean,
    Quantile { level: f64 },
}

impl Target {
    pub fn evaluate<D: ContinuousDist<f64> + ?Sized>(&self, dist: &D) -> Result<f64> {
        match *self {
            Target::Mean => Ok(dist.mean()),
            Target::Quantile { level } => dist.quantile(level),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Target::Mean => "mean".into(),
            Target::Quantile { level } => format!("quantile({level})"),
        }
    }
}

/// `x ↦ target(model(x))`.
pub fn model_target(model: &FittedModel, target: Target) -> impl Fn(&[f64]) -> Result<f64> + Sync + '_ {
    move |x| target.evaluate(&model.predict(x)?)
}

/// `x ↦ target(refined(x)) - target(baseline(x))`.
pub fn adjustment_target<'a>(
    refined: &'a FittedModel,
    baseline: &'a FittedModel,
    target: Target,
) -> impl Fn(&[f64]) -> Result<f64> + Sync + 'a {
    move |x| Ok(target.evaluate(&refined.predict(x)?)? - target.evaluate(&baseline.predict(x)?)?)
}

/// A SHAP player: one or more feature columns switched in and out together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Player {
    pub name: String,
    pub columns: Vec<usize>,
}

pub fn singleton_players(names: &[String]) -> Vec<Player> {
    names
        .iter()
        .enumerate()
        .map(|(j, n)| Player {
            name: n.clone(),
            columns: vec![j],
        })
        .collect()
}

pub fn grouped_players(groups: Vec<(String, Vec<usize>)>) -> Vec<Player> {
    groups
        .into_iter()
        .map(|(name, columns)| Player { name, columns })
        .collect()
}

/// Rows that fill in the features absent from a coalition.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    rows: Array2<f64>,
}

impl Background {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(DrnError::invalid("background sample is empty"));
        }
        Ok(Self { rows })
    }

    /// `m` rows of `data` drawn without replacement.
    pub fn sample(data: ArrayView2<f64>, m: usize, seed: u64) -> Result<Self> {
        if m == 0 || m > data.nrows() {
            return Err(DrnError::invalid(format!(
                "background size {m} must be between 1 and the {} available rows",
                data.nrows()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, data.nrows(), m).into_vec();
        idx.sort_unstable();
        Self::new(data.select(Axis(0), &idx))
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }
}

/// Target values at `x` with the coalition's features kept and every other
/// feature taken from each background row in turn.
fn coalition_values<F>(f: &F, x: &[f64], background: &Background, players: &[Player], coalition: &[bool]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let rows: Vec<Vec<f64>> = background
        .rows
        .rows()
        .into_iter()
        .map(|bg| {
            let mut z = bg.to_vec();
            for (p, &on) in players.iter().zip(coalition) {
                if on {
                    for &c in &p.columns {
                        z[c] = x[c];
                    }
                }
            }
            z
        })
        .collect();
    rows.par_iter().map(|z| f(z)).collect()
}

/// Monte Carlo value of a coalition: the mean over the background sample.
pub fn value_function<F>(f: &F, x: &[f64], background: &Background, players: &[Player], coalition: &[bool]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if coalition.len() != players.len() {
        return Err(DrnError::Dimension {
            context: "coalition",
            expected: players.len(),
            found: coalition.len(),
        });
    }
    let v = coalition_values(f, x, background, players, coalition)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub target: String,
    pub players: Vec<String>,
    pub base_value: f64,
    pub phi: Vec<f64>,
    /// Monte Carlo standard error of each attribution over background rows.
    pub std_error: Vec<f64>,
    pub prediction: f64,
    pub exact: bool,
}

impl ShapExplanation {
    /// `base_value + Σφ - prediction`.
    pub fn efficiency_gap(&self) -> f64 {
        self.base_value + self.phi.iter().sum::<f64>() - self.prediction
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapOptions {
    /// Coalitions drawn when there are too many players to enumerate.
    pub coalition_samples: usize,
    pub seed: u64,
}

impl Default for ShapOptions {
    fn default() -> Self {
        Self {
            coalition_samples: DEFAULT_COALITION_SAMPLES,
            seed: 0,
        }
    }
}

/// Shapley kernel weight of a coalition of size `s` among `p` players.
pub fn shapley_kernel(p: usize, s: usize) -> f64 {
    let binom = (0..s).fold(1.0, |acc, i| acc * (p - i) as f64 / (i + 1) as f64);
    (p - 1) as f64 / (binom * (s * (p - s)) as f64)
}

/// Proper, nonempty coalitions with their regression weights.
fn coalitions(p: usize, options: &ShapOptions) -> Result<(Vec<Vec<bool>>, Vec<f64>, bool)> {
    let to_mask = |bits: u64| (0..p).map(|j| bits >> j & 1 == 1).collect::<Vec<bool>>();
    if p <= EXACT_MAX_PLAYERS {
        let (masks, weights) = (1..(1u64 << p) - 1)
            .map(|bits| (to_mask(bits), shapley_kernel(p, bits.count_ones() as usize)))
            .unzip();
        return Ok((masks, weights, true));
    }
    if options.coalition_samples == 0 {
        return Err(DrnError::invalid("coalition sample count must be positive"));
    }
    // Sizes are drawn with total kernel mass, members uniformly within a size.
    let sizes: Vec<f64> = (1..p).map(|s| (p - 1) as f64 / (s * (p - s)) as f64).collect();
    let size_dist = WeightedIndex::new(&sizes).map_err(|e| DrnError::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut counts: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
    for _ in 0..options.coalition_samples {
        let s = size_dist.sample(&mut rng) + 1;
        let mut mask = vec![false; p];
        for j in sample(&mut rng, p, s) {
            mask[j] = true;
        }
        *counts.entry(mask).or_insert(0.0) += 1.0;
    }
    let (masks, weights) = counts.into_iter().unzip();
    Ok((masks, weights, false))
}

/// Weighted least squares with `φ_p` eliminated through `Σφ = total`.
struct ConstrainedSolve {
    masks: Vec<Vec<bool>>,
    weights: Vec<f64>,
    gram: Array2<f64>,
}

impl ConstrainedSolve {
    fn new(masks: Vec<Vec<bool>>, weights: Vec<f64>, p: usize) -> Self {
        let q = p - 1;
        let mut gram = Array2::zeros((q, q));
        for (mask, &w) in masks.iter().zip(&weights) {
            let a = Self::design(mask);
            for i in 0..q {
                for j in 0..q {
                    gram[[i, j]] += w * a[i] * a[j];
                }
            }
        }
        Self { masks, weights, gram }
    }

    fn design(mask: &[bool]) -> Vec<f64> {
        let last = if mask[mask.len() - 1] { 1.0 } else { 0.0 };
        mask[..mask.len() - 1]
            .iter()
            .map(|&on| if on { 1.0 } else { 0.0 } - last)
            .collect()
    }

    /// Attributions for coalition values `v` (relative to `base`) summing to `total`.
    fn solve(&self, v: &[f64], base: f64, total: f64) -> Result<Vec<f64>> {
        let q = self.gram.nrows();
        let mut rhs = Array1::zeros(q);
        for ((mask, &w), &vs) in self.masks.iter().zip(&self.weights).zip(v) {
            let last = if mask[q] { 1.0 } else { 0.0 };
            let t = vs - base - last * total;
            for (i, a) in Self::design(mask).into_iter().enumerate() {
                rhs[i] += w * a * t;
            }
        }
        let head = solve_spd(&self.gram, &rhs, "kernel SHAP normal equations")?;
        let mut phi = head.to_vec();
        phi.push(total - phi.iter().sum::<f64>());
        Ok(phi)
    }
}

/// Kernel SHAP attributions of `f` at `x`.
///
/// The base value is `v(∅)` and attributions sum to `f(x) - v(∅)`. All
/// coalitions are enumerated for up to 13 players, otherwise coalitions are
/// sampled in proportion to the Shapley kernel.
pub fn kernel_shap<F>(
    f: &F,
    target: &str,
    x: &[f64],
    background: &Background,
    players: &[Player],
    options: &ShapOptions,
) -> Result<ShapExplanation>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let p = players.len();
    if p < 2 {
        return Err(DrnError::invalid("kernel SHAP needs at least two players"));
    }
    if x.len() != background.rows.ncols() {
        return Err(DrnError::Dimension {
            context: "explained instance",
            expected: background.rows.ncols(),
            found: x.len(),
        });
    }
    let prediction = f(x)?;
    let empty = coalition_values(f, x, background, players, &vec![false; p])?;
    let m = empty.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let base_value = mean(&empty);

    let (masks, weights, exact) = coalitions(p, options)?;
    let per_row: Vec<Vec<f64>> = masks
        .iter()
        .map(|mask| coalition_values(f, x, background, players, mask))
        .collect::<Result<_>>()?;
    let solver = ConstrainedSolve::new(masks, weights, p);
    let v: Vec<f64> = per_row.iter().map(|r| mean(r)).collect();
    let phi = solver.solve(&v, base_value, prediction - base_value)?;

    // The solve is linear in the values, so φ is the mean of single-row solutions.
    let mut sq = vec![0.0; p];
    for r in 0..m {
        let vr: Vec<f64> = per_row.iter().map(|row| row[r]).collect();
        let phi_r = solver.solve(&vr, empty[r], prediction - empty[r])?;
        for j in 0..p {
            sq[j] += (phi_r[j] - phi[j]).powi(2);
        }
    }
    let std_error = sq
        .iter()
        .map(|s| if m > 1 { (s / (m - 1) as f64 / m as f64).sqrt() } else { f64::NAN })
        .collect();

    Ok(ShapExplanation {
        target: target.to_string(),
        players: players.iter().map(|pl| pl.name.clone()).collect(),
        base_value,
        phi,
        std_error,
        prediction,
        exact,
    })
}

/// Mean absolute attribution of each player.
pub fn importance(explanations: &[ShapExplanation]) -> Vec<f64> {
    let Some(first) = explanations.first() else {
        return Vec::new();
    };
    let n = explanations.len() as f64;
    (0..first.phi.len())
        .map(|j| explanations.iter().map(|e| e.phi[j].abs()).sum::<f64>() / n)
        .collect()
}

/// Value a player takes in row `x`: the feature itself, or for a one-hot
/// group the 1-based index of the active level (0 for the reference level).
pub fn player_value(player: &Player, x: &[f64]) -> f64 {
    match player.columns.as_slice() {
        [c] => x[*c],
        cols => cols
            .iter()
            .enumerate()
            .find(|(_, &c)| x[c] != 0.0)
            .map_or(0.0, |(k, _)| (k + 1) as f64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependencePoint {
    pub value: f64,
    pub phi: f64,
    pub color: Option<f64>,
}

/// Scatter data of player `j`'s value against its attribution, optionally
/// keyed by the value of `color_by`.
pub fn dependence(
    explanations: &[ShapExplanation],
    instances: ArrayView2<f64>,
    players: &[Player],
    j: usize,
    color_by: Option<usize>,
) -> Vec<DependencePoint> {
    explanations
        .iter()
        .zip(instances.rows())
        .map(|(e, x)| {
            let x = x.to_vec();
            DependencePoint {
                value: player_value(&players[j], &x),
                phi: e.phi[j],
                color: color_by.map(|c| player_value(&players[c], &x)),
            }
        })
        .collect()
}

/// Flat CSV: one line per instance and player.
pub fn write_csv<W: Write>(explanations: &[ShapExplanation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["instance", "feature", "phi", "std_error", "base_value", "prediction", "target"])?;
    for (i, e) in explanations.iter().enumerate() {
        for ((name, phi), se) in e.players.iter().zip(&e.phi).zip(&e.std_error) {
            w.write_record([
                i.to_string(),
                name.clone(),
                phi.to_string(),
                se.to_string(),
                e.base_value.to_string(),
                e.prediction.to_string(),
                e.target.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn names(p: usize) -> Vec<String> {
        (1..=p).map(|j| format!("x{j}")).collect()
    }

    fn symmetric_background() -> Background {
        Background::new(array![[1.0, -2.0], [-1.0, 2.0], [0.5, 1.0], [-0.5, -1.0]]).unwrap()
    }

    #[test]
    fn kernel_weights() {
        assert_abs_diff_eq!(shapley_kernel(2, 1), 0.5);
        assert_abs_diff_eq!(shapley_kernel(4, 2), 3.0 / (6.0 * 4.0));
    }

    #[test]
    fn linear_two_features_by_hand() {
        let f = |x: &[f64]| Ok(x[0] + x[1]);
        let e = kernel_shap(&f, "sum", &[1.0, 2.0], &symmetric_background(), &singleton_players(&names(2)), &ShapOptions::default()).unwrap();
        assert!(e.exact);
        assert_abs_diff_eq!(e.base_value, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.phi[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.phi[1], 2.0, epsilon = 1e-12);
        assert!(e.efficiency_gap().abs() < 1e-9);
    }

    #[test]
    fn value_function_edges() {
        let f = |x: &[f64]| Ok(x[0] * x[1] + x[0]);
        let bg = symmetric_background();
        let pl = singleton_players(&names(2));
        let x = [0.3, 0.7];
        assert_eq!(value_function(&f, &x, &bg, &pl, &[true, true]).unwrap(), f(&x).unwrap());
        let empty: f64 = bg.rows().rows().into_iter().map(|r| r[0] * r[1] + r[0]).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(value_function(&f, &x, &bg, &pl, &[false, false]).unwrap(), empty);
        assert!(value_function(&f, &x, &bg, &pl, &[true]).is_err());
    }

    #[test]
    fn constant_model_has_zero_attributions() {
        let f = |_: &[f64]| Ok(4.2);
        let e = kernel_shap(&f, "c", &[1.0, 2.0, 3.0], &Background::new(Array2::ones((5, 3))).unwrap(), &singleton_players(&names(3)), &ShapOptions::default()).unwrap();
        assert_eq!(e.base_value, 4.2);
        assert!(e.phi.iter().all(|p| p.abs() < 1e-12));
    }

    #[test]
    fn symmetry_and_dummy() {
        let f = |x: &[f64]| Ok((x[0] + x[1]).powi(2) + 0.0 * x[2]);
        let bg = Background::new(array![[0.1, 0.1, 5.0], [0.4, 0.4, -1.0], [-0.3, -0.3, 2.0]]).unwrap();
        let e = kernel_shap(&f, "f", &[1.0, 1.0, 7.0], &bg, &singleton_players(&names(3)), &ShapOptions::default()).unwrap();
        assert_abs_diff_eq!(e.phi[0], e.phi[1], epsilon = 1e-9);
        assert_abs_diff_eq!(e.phi[2], 0.0, epsilon = 1e-12);
        assert!(e.efficiency_gap().abs() < 1e-9);
    }

    #[test]
    fn sampled_path_recovers_additive_model() {
        let p = 16;
        let f = |x: &[f64]| Ok(x.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v).sum());
        let bg = Background::new(Array2::zeros((3, p))).unwrap();
        let x: Vec<f64> = (0..p).map(|j| 0.1 * j as f64 - 0.5).collect();
        let e = kernel_shap(&f, "lin", &x, &bg, &singleton_players(&names(p)), &ShapOptions::default()).unwrap();
        assert!(!e.exact);
        for j in 0..p {
            assert_abs_diff_eq!(e.phi[j], (j as f64 + 1.0) * x[j], epsilon = 1e-9);
        }
        assert!(e.efficiency_gap().abs() < 1e-9);
    }

    #[test]
    fn groups_switch_columns_together() {
        let f = |x: &[f64]| Ok(x[0] + 2.0 * x[1] + 3.0 * x[2]);
        let bg = Background::new(Array2::zeros((2, 3))).unwrap();
        let players = grouped_players(vec![("a".into(), vec![0]), ("bc".into(), vec![1, 2])]);
        let e = kernel_shap(&f, "f", &[1.0, 0.0, 1.0], &bg, &players, &ShapOptions::default()).unwrap();
        assert_abs_diff_eq!(e.phi[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.phi[1], 3.0, epsilon = 1e-12);
        assert_eq!(player_value(&players[1], &[1.0, 0.0, 1.0]), 2.0);
        assert_eq!(player_value(&players[1], &[1.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn background_sampling() {
        let data = Array2::from_shape_fn((50, 2), |(i, j)| (i * 2 + j) as f64);
        let a = Background::sample(data.view(), 10, 3).unwrap();
        assert_eq!(a, Background::sample(data.view(), 10, 3).unwrap());
        let mut firsts: Vec<f64> = a.rows().column(0).to_vec();
        firsts.dedup();
        assert_eq!(firsts.len(), 10);
        assert!(Background::sample(data.view(), 51, 3).is_err());
    }

    #[test]
    fn importance_and_csv() {
        let e = ShapExplanation {
            target: "mean".into(),
            players: names(2),
            base_value: 1.0,
            phi: vec![0.5, -0.25],
            std_error: vec![0.0, 0.0],
            prediction: 1.25,
            exact: true,
        };
        let f = ShapExplanation { phi: vec![-0.5, 0.75], ..e.clone() };
        assert_eq!(importance(&[e.clone(), f]), vec![0.5, 0.5]);
        let mut buf = Vec::new();
        write_csv(&[e], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("instance,feature,phi"));
    }
}
