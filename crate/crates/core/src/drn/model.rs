use std::sync::Arc;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::MlpParams;
use crate::drn::masses::BaselineSummary;
use crate::drn::refined::RefinedDistribution;
use crate::error::{DrnError, Result};
use crate::glm::GammaGlmModel;
use crate::partition::Partition;
use crate::scalar::Scalar;

/// A frozen gamma GLM baseline plus the network that refines it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct DrnModel<T> {
    baseline: GammaGlmModel<T>,
    partition: Arc<Partition<T>>,
    net: MlpParams<T>,
}

impl<T: Scalar> DrnModel<T> {
    pub fn new(baseline: GammaGlmModel<T>, partition: Partition<T>, net: MlpParams<T>) -> Result<Self> {
        if net.output_dim() != partition.len() {
            return Err(DrnError::Dimension {
                context: "DRN network output",
                expected: partition.len(),
                found: net.output_dim(),
            });
        }
        if net.input_dim() != baseline.n_features() {
            return Err(DrnError::Dimension {
                context: "DRN network input",
                expected: baseline.n_features(),
                found: net.input_dim(),
            });
        }
        Ok(Self {
            baseline,
            partition: Arc::new(partition),
            net,
        })
    }

    /// A model with freshly initialized weights.
    pub fn init<R: Rng + ?Sized>(
        baseline: GammaGlmModel<T>,
        partition: Partition<T>,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![baseline.n_features()];
        sizes.extend_from_slice(hidden);
        sizes.push(partition.len());
        let net = MlpParams::init(&sizes, rng);
        Self::new(baseline, partition, net)
    }

    pub fn baseline(&self) -> &GammaGlmModel<T> {
        &self.baseline
    }

    pub fn partition(&self) -> &Partition<T> {
        &self.partition
    }

    pub fn shared_partition(&self) -> Arc<Partition<T>> {
        Arc::clone(&self.partition)
    }

    pub fn net(&self) -> &MlpParams<T> {
        &self.net
    }

    pub fn with_net(&self, net: MlpParams<T>) -> Result<Self> {
        Self::new(self.baseline.clone(), (*self.partition).clone(), net)
    }

    pub fn summary(&self, x: &[T]) -> Result<BaselineSummary<T>> {
        Ok(BaselineSummary::new(self.baseline.conditional(x)?, &self.partition))
    }

    pub fn forward(&self, x: &[T]) -> Result<RefinedDistribution<T>> {
        let summary = self.summary(x)?;
        let logits = self.net.forward_one(x)?;
        RefinedDistribution::new(self.shared_partition(), &summary, &logits)
    }

    pub fn forward_batch(&self, x: ArrayView2<T>) -> Result<Vec<RefinedDistribution<T>>> {
        let logits = self.net.forward(x, None)?;
        x.rows()
            .into_iter()
            .zip(logits.rows())
            .map(|(row, l)| {
                let row = row.to_vec();
                let summary = self.summary(&row)?;
                RefinedDistribution::new(self.shared_partition(), &summary, &l.to_vec())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::ContinuousDist;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> DrnModel<f64> {
        let glm = GammaGlmModel::new(vec![0.5, 0.3, -0.2], 0.3, vec!["a".into(), "b".into()]).unwrap();
        let cuts: Vec<f64> = (0..=20).map(|i| 0.1 + 0.3 * i as f64).collect();
        let p = Partition::new(cuts).unwrap();
        DrnModel::init(glm, p, &[8, 8], &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn rejects_mismatched_network() {
        let glm = GammaGlmModel::new(vec![0.0, 1.0], 0.5, vec!["a".into()]).unwrap();
        let p = Partition::new(vec![0.0, 1.0, 2.0]).unwrap();
        let net = MlpParams::zeros(&[1, 4, 3]);
        assert!(DrnModel::new(glm.clone(), p.clone(), net).is_err());
        let net = MlpParams::zeros(&[2, 4, 2]);
        assert!(DrnModel::new(glm, p, net).is_err());
    }

    #[test]
    fn fresh_network_stays_near_baseline() {
        let m = model();
        let rd = m.forward(&[0.4, -0.1]).unwrap();
        for (k, &a) in rd.adjustments().iter().enumerate() {
            if rd.baseline_masses()[k] > 1e-6 {
                assert!((a - 1.0).abs() < 0.5, "a_{k} = {a}");
            }
        }
    }

    #[test]
    fn raising_one_logit_moves_mass_to_it() {
        let m = model();
        let x = [0.4, -0.1];
        let s = m.summary(&x).unwrap();
        let l = m.net().forward_one(&x).unwrap();
        let base = RefinedDistribution::new(m.shared_partition(), &s, &l).unwrap();
        let mut bumped = l.clone();
        bumped[4] += 0.5;
        let up = RefinedDistribution::new(m.shared_partition(), &s, &bumped).unwrap();
        for k in 0..l.len() {
            if k == 4 {
                assert!(up.masses()[k] > base.masses()[k]);
            } else if base.masses()[k] > 0.0 {
                assert!(up.masses()[k] < base.masses()[k]);
            }
        }
    }

    #[test]
    fn batch_forward_matches_single() {
        let m = model();
        let x = Array2::from_shape_fn((6, 2), |(i, j)| (i as f64 * 0.4 - 1.0) * (j as f64 + 1.0));
        let batch = m.forward_batch(x.view()).unwrap();
        for (row, rd) in x.rows().into_iter().zip(&batch) {
            let single = m.forward(&row.to_vec()).unwrap();
            for (a, b) in single.masses().iter().zip(rd.masses()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
            assert_abs_diff_eq!(single.mean(), rd.mean(), epsilon = 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let m = model();
        let json = serde_json::to_string(&m).unwrap();
        let back: DrnModel<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
