//! Cutpoint grids over the refinement region `[c₀, c_K)`.
//!
//! Intervals are half-open, `T_k = [c_{k-1}, c_k)`.

use serde::{Deserialize, Serialize};

use crate::error::{DrnError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Partition<T> {
    cutpoints: Vec<T>,
}

impl<T: Scalar> Partition<T> {
    pub fn new(cutpoints: Vec<T>) -> Result<Self> {
        if cutpoints.len() < 2 {
            return Err(DrnError::invalid("a partition needs at least two cutpoints"));
        }
        if cutpoints.iter().any(|c| !c.is_finite()) {
            return Err(DrnError::invalid("cutpoints must be finite"));
        }
        if cutpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(DrnError::invalid("cutpoints must be strictly increasing"));
        }
        Ok(Self { cutpoints })
    }

    pub fn cutpoints(&self) -> &[T] {
        &self.cutpoints
    }

    /// Number of intervals `K`.
    pub fn len(&self) -> usize {
        self.cutpoints.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lower(&self) -> T {
        self.cutpoints[0]
    }

    pub fn upper(&self) -> T {
        self.cutpoints[self.cutpoints.len() - 1]
    }

    pub fn width(&self, k: usize) -> T {
        self.cutpoints[k + 1] - self.cutpoints[k]
    }

    pub fn widths(&self) -> Vec<T> {
        self.cutpoints.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn contains(&self, y: T) -> bool {
        y >= self.lower() && y < self.upper()
    }

    /// Zero-based index of the interval containing `y`, if inside `[c₀, c_K)`.
    pub fn locate(&self, y: T) -> Option<usize> {
        if !self.contains(y) {
            return None;
        }
        // First cutpoint strictly greater than y, minus one.
        let idx = self.cutpoints.partition_point(|&c| c <= y);
        Some(idx - 1)
    }

    /// Training-observation counts per interval.
    pub fn counts(&self, y: &[T]) -> Vec<usize> {
        let mut counts = vec![0; self.len()];
        for &v in y {
            if let Some(k) = self.locate(v) {
                counts[k] += 1;
            }
        }
        counts
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for Partition<T> {
    type Error = DrnError;

    fn try_from(value: Vec<T>) -> Result<Self> {
        Self::new(value)
    }
}

impl<T> From<Partition<T>> for Vec<T> {
    fn from(p: Partition<T>) -> Self {
        p.cutpoints
    }
}

/// Bounds `(c₀, c_K)` straddling the observed response range.
pub fn refinement_bounds<T: Scalar>(y: &[T], lower_margin: T, upper_margin: T) -> Result<(T, T)> {
    if y.is_empty() {
        return Err(DrnError::invalid("refinement bounds need at least one response"));
    }
    if lower_margin < T::zero() || upper_margin < T::zero() {
        return Err(DrnError::invalid("refinement margins must be nonnegative"));
    }
    let min = y.iter().copied().fold(T::infinity(), T::min);
    let max = y.iter().copied().fold(T::neg_infinity(), T::max);
    if !(min < max) {
        return Err(DrnError::invalid("responses have a degenerate range"));
    }
    let lower = if min > T::zero() {
        min * (T::one() - lower_margin)
    } else {
        min - lower_margin * (max - min)
    };
    let upper = if max > T::zero() {
        max * (T::one() + upper_margin)
    } else {
        max + upper_margin * (max - min)
    };
    Ok((lower, upper))
}

/// `ceil(1/proportion)` equal-width intervals between `lower` and `upper`.
pub fn uniform_cutpoints<T: Scalar>(lower: T, upper: T, proportion: T) -> Result<Partition<T>> {
    check_proportion(proportion)?;
    equal_width(lower, upper, guarded_ceil(proportion.recip().f64()))
}

/// `ceil(proportion · n)` equal-width intervals for `n` training responses.
pub fn observation_cutpoints<T: Scalar>(lower: T, upper: T, proportion: T, n: usize) -> Result<Partition<T>> {
    check_proportion(proportion)?;
    equal_width(lower, upper, guarded_ceil(proportion.f64() * n as f64))
}

fn check_proportion<T: Scalar>(proportion: T) -> Result<()> {
    if !(proportion > T::zero() && proportion <= T::one()) {
        return Err(DrnError::invalid("cutpoint proportion must lie in (0, 1]"));
    }
    Ok(())
}

// Guards the ceiling against representation error, e.g. 1/0.1 = 10.000000000000002.
fn guarded_ceil(raw: f64) -> usize {
    let k = if (raw - raw.round()).abs() < 1e-9 {
        raw.round()
    } else {
        raw.ceil()
    };
    (k as usize).max(1)
}

fn equal_width<T: Scalar>(lower: T, upper: T, k: usize) -> Result<Partition<T>> {
    if !(lower < upper) {
        return Err(DrnError::invalid("uniform grid needs lower < upper"));
    }
    let width = (upper - lower) / T::from_usize_lossy(k);
    let mut cuts: Vec<T> = (0..k)
        .map(|i| lower + T::from_usize_lossy(i) * width)
        .collect();
    cuts.push(upper);
    Partition::new(cuts)
}

/// Merges cutpoints so that every retained interior boundary leaves at least
/// `min_obs` training observations on both sides of the sweep.
///
/// Sweeps `right = 1..K̃-1`, keeping `c_right` only when both
/// `[c_left, c_right)` and `[c_right, c_K̃)` hold `min_obs` or more
/// observations. The final cutpoint is always appended, so the last interval
/// may end up with fewer than `min_obs`.
pub fn merge_cutpoints<T: Scalar>(raw: &Partition<T>, y: &[T], min_obs: usize) -> Partition<T> {
    let cuts = raw.cutpoints();
    let last = cuts.len() - 1;
    let mut sorted: Vec<T> = y.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("responses must not be NaN"));
    let count_in = |lo: T, hi: T| -> usize {
        sorted.partition_point(|&v| v < hi) - sorted.partition_point(|&v| v < lo)
    };

    let mut merged = vec![cuts[0]];
    let mut left = 0;
    for right in 1..last {
        let left_count = count_in(cuts[left], cuts[right]);
        let right_count = count_in(cuts[right], cuts[last]);
        if left_count >= min_obs && right_count >= min_obs {
            merged.push(cuts[right]);
            left = right;
        }
    }
    merged.push(cuts[last]);
    Partition::new(merged).expect("subsequence of a valid partition is valid")
}

/// How the proportion sets the number of raw intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridRule {
    /// `ceil(proportion · n_train)` intervals.
    #[default]
    PerObservation,
    /// `ceil(1 / proportion)` intervals.
    Intervals,
}

/// How a partition is derived from training responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub proportion: f64,
    #[serde(default)]
    pub grid: GridRule,
    /// Minimum observations per merged interval; 0 skips merging.
    #[serde(default)]
    pub min_obs: usize,
    #[serde(default = "default_margin")]
    pub lower_margin: f64,
    #[serde(default = "default_margin")]
    pub upper_margin: f64,
}

fn default_margin() -> f64 {
    0.01
}

impl PartitionConfig {
    pub fn new(proportion: f64, min_obs: usize) -> Self {
        Self {
            proportion,
            grid: GridRule::default(),
            min_obs,
            lower_margin: default_margin(),
            upper_margin: default_margin(),
        }
    }

    pub fn drn() -> Self {
        Self::new(0.025, 5)
    }

    pub fn ddr() -> Self {
        Self::new(0.03, 0)
    }

    /// Bounds, uniform grid, then merging against the training responses.
    pub fn build<T: Scalar>(&self, y: &[T]) -> Result<Partition<T>> {
        let (lo, hi) = refinement_bounds(y, T::c(self.lower_margin), T::c(self.upper_margin))?;
        let p = T::c(self.proportion);
        let raw = match self.grid {
            GridRule::PerObservation => observation_cutpoints(lo, hi, p, y.len())?,
            GridRule::Intervals => uniform_cutpoints(lo, hi, p)?,
        };
        Ok(if self.min_obs > 0 {
            merge_cutpoints(&raw, y, self.min_obs)
        } else {
            raw
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bounds_follow_margin_rule() {
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(refinement_bounds(&y, 0.0, 0.0).unwrap(), (1.0, 10.0));
        let (lo, hi) = refinement_bounds(&y, 0.1, 0.1).unwrap();
        assert!((lo - 0.9).abs() < 1e-12 && (hi - 11.0).abs() < 1e-12);
        assert!(refinement_bounds(&[3.0, 3.0], 0.1, 0.1).is_err());
        assert!(refinement_bounds::<f64>(&[], 0.1, 0.1).is_err());
        let (lo, _) = refinement_bounds(&[-2.0, 2.0], 0.25, 0.0).unwrap();
        assert_eq!(lo, -3.0);
    }

    #[test]
    fn uniform_grids() {
        let p = uniform_cutpoints(0.0, 10.0, 0.1).unwrap();
        assert_eq!(p.len(), 10);
        for (i, c) in p.cutpoints().iter().enumerate() {
            assert!((c - i as f64).abs() < 1e-12);
        }
        let single = uniform_cutpoints(0.0, 1.0, 1.0).unwrap();
        assert_eq!(single.cutpoints(), &[0.0, 1.0]);
        let p = uniform_cutpoints(0.0, 10.0, 0.03).unwrap();
        assert_eq!(p.len(), 34);
        assert!((p.width(0) - 10.0_f64 / 34.0).abs() < 1e-12);
        assert_eq!(uniform_cutpoints(0.0, 1.0, 0.025).unwrap().len(), 40);
    }

    #[test]
    fn observation_scaled_grids() {
        assert_eq!(observation_cutpoints(0.0, 1.0, 0.025, 12_000).unwrap().len(), 300);
        assert_eq!(observation_cutpoints(0.0, 1.0, 0.1, 30).unwrap().len(), 3);
        assert_eq!(observation_cutpoints(0.0, 1.0, 0.01, 10).unwrap().len(), 1);
        assert!(observation_cutpoints(0.0, 1.0, 0.0, 10).is_err());

        let y: Vec<f64> = (0..400).map(|i| 1.0 + f64::from(i) / 100.0).collect();
        let per_obs = PartitionConfig::new(0.1, 0).build(&y).unwrap();
        assert_eq!(per_obs.len(), 40);
        let literal = PartitionConfig {
            grid: GridRule::Intervals,
            ..PartitionConfig::new(0.1, 0)
        };
        assert_eq!(literal.build(&y).unwrap().len(), 10);
        let parsed: PartitionConfig = serde_json::from_str(r#"{"proportion": 0.1, "grid": "intervals"}"#).unwrap();
        assert_eq!(parsed, literal);
    }

    #[test]
    fn merge_hand_trace() {
        let raw = Partition::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let merged = merge_cutpoints(&raw, &[0.5, 1.5, 2.5], 2);
        assert_eq!(merged.cutpoints(), &[0.0, 3.0]);
    }

    #[test]
    fn merge_keeps_well_populated_grids() {
        let raw = Partition::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = [0.1, 0.2, 1.1, 1.2, 2.1, 2.2];
        assert_eq!(merge_cutpoints(&raw, &y, 2), raw);
        assert_eq!(merge_cutpoints(&raw, &[0.5, 1.5, 2.5], 1), raw);
    }

    #[test]
    fn locate_is_half_open() {
        let p = Partition::new(vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(p.locate(0.0), Some(0));
        assert_eq!(p.locate(1.0), Some(1));
        assert_eq!(p.locate(1.999), Some(1));
        assert_eq!(p.locate(2.0), None);
        assert_eq!(p.locate(-0.1), None);
    }

    #[test]
    fn json_is_plain_array() {
        let p = Partition::new(vec![0.0, 0.5, 2.0]).unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), "[0.0,0.5,2.0]");
        assert!(serde_json::from_str::<Partition<f64>>("[1.0,0.5]").is_err());
    }

    proptest! {
        #[test]
        fn merge_invariants(
            y in proptest::collection::vec(0.0f64..10.0, 1..200),
            prop in 0.02f64..0.5,
            m in 1usize..8,
        ) {
            let raw = uniform_cutpoints(0.0, 10.0, prop).unwrap();
            let merged = merge_cutpoints(&raw, &y, m);
            // Subsequence containing both endpoints.
            let rc = raw.cutpoints();
            let mc = merged.cutpoints();
            prop_assert_eq!(mc[0], rc[0]);
            prop_assert_eq!(mc[mc.len() - 1], rc[rc.len() - 1]);
            prop_assert!(mc.iter().all(|c| rc.contains(c)));
            let counts = merged.counts(&y);
            for &c in &counts[..counts.len() - 1] {
                prop_assert!(c >= m);
            }
            prop_assert_eq!(merge_cutpoints(&merged, &y, m), merged);
        }
    }
}
