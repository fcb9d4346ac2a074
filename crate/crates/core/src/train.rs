//! Mini-batch Adam with inverted dropout and early stopping.

use std::io::Write;

use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{value_and_grad, Batch, DropoutMasks, Gradients, MlpParams, OutputLoss};
use crate::error::{DrnError, Result};
use crate::losses::{FitLoss, PenaltyWeights};
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
/// A validation loss must drop by at least this much to count as progress.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

/// What early stopping monitors on the validation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopCriterion {
    /// The training objective itself.
    #[default]
    Loss,
    /// Mean CRPS of the predicted distributions.
    Crps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub hidden_layers: usize,
    pub neurons_per_layer: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub penalty_weights: PenaltyWeights,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fit_loss: FitLoss,
    #[serde(default)]
    pub stop_on: StopCriterion,
}

fn default_patience() -> usize {
    30
}

fn default_max_epochs() -> usize {
    1000
}

impl TrainingConfig {
    fn preset(lr: f64, batch: usize, dropout: f64, layers: usize, neurons: usize) -> Self {
        Self {
            learning_rate: lr,
            batch_size: batch,
            dropout_rate: dropout,
            hidden_layers: layers,
            neurons_per_layer: neurons,
            patience: default_patience(),
            max_epochs: default_max_epochs(),
            penalty_weights: PenaltyWeights::default(),
            seed: 0,
            fit_loss: FitLoss::Jbce,
            stop_on: StopCriterion::Loss,
        }
    }

    /// DRN settings for the synthetic study.
    pub fn drn() -> Self {
        Self {
            penalty_weights: PenaltyWeights {
                kl: 0.00047,
                roughness: 0.1,
                mean: 0.01,
            },
            ..Self::preset(0.00081, 256, 0.140, 3, 128)
        }
    }

    /// DRN settings for the motor insurance study.
    pub fn drn_real_data() -> Self {
        Self {
            penalty_weights: PenaltyWeights {
                kl: 0.00162,
                roughness: 1e-5,
                mean: 1e-6,
            },
            ..Self::preset(0.00291, 512, 0.26987, 2, 512)
        }
    }

    pub fn cann() -> Self {
        Self::preset(0.00638, 256, 0.1, 3, 512)
    }

    pub fn mdn() -> Self {
        Self::preset(0.00451, 128, 0.5, 1, 256)
    }

    pub fn ddr() -> Self {
        Self::preset(0.00642, 256, 0.0192, 3, 32)
    }

    /// DRN settings for the regularisation study on the normal-response data.
    pub fn regularization_study() -> Self {
        Self::preset(0.002, 200, 0.2, 2, 128)
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        vec![self.neurons_per_layer; self.hidden_layers]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DrnError::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(DrnError::invalid("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(DrnError::invalid("dropout_rate must lie in [0, 1)"));
        }
        if self.hidden_layers == 0 || self.neurons_per_layer == 0 {
            return Err(DrnError::invalid("hidden_layers and neurons_per_layer must be positive"));
        }
        if self.patience == 0 || self.max_epochs == 0 {
            return Err(DrnError::invalid("patience and max_epochs must be positive"));
        }
        self.penalty_weights.validate()
    }

    /// Stream for weight initialization.
    pub fn init_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        rng
    }

    /// Stream for shuffling and dropout.
    pub fn train_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2);
        rng
    }
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Gradients<T>,
    v: Gradients<T>,
    t: i32,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &MlpParams<T>) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Scalar>(
    params: &mut MlpParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if !grads.is_congruent(params) {
        return Err(DrnError::invalid("gradient shapes do not match the parameters"));
    }
    if !grads.is_finite() {
        return Err(DrnError::Divergence {
            what: "gradient",
            batch: state.t as usize,
        });
    }
    state.t += 1;
    let (b1, b2) = (T::c(ADAM_BETA1), T::c(ADAM_BETA2));
    let one = T::one();
    let c1 = one - b1.powi(state.t);
    let c2 = one - b2.powi(state.t);
    let lr = T::c(lr);
    let eps = T::c(ADAM_EPSILON);
    for (((p, &g), m), v) in params
        .params_mut()
        .zip(grads.values())
        .zip(state.m.values_mut())
        .zip(state.v.values_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// A shuffled permutation of `0..n` cut into consecutive batches.
pub fn make_batches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean loss over every row of a split, without dropout.
pub fn evaluate_loss<T, L>(params: &MlpParams<T>, inputs: ArrayView2<T>, loss: &L) -> Result<f64>
where
    T: Scalar,
    L: OutputLoss<T> + ?Sized,
{
    let rows: Vec<usize> = (0..inputs.nrows()).collect();
    let out = params.forward(inputs, None)?;
    Ok(loss.loss(out.view(), &rows)?.f64())
}

/// Trains `init` on the rows of `inputs` and returns the weights of the best
/// validation epoch.
///
/// `loss` must index its targets by row of `inputs`. `validate` scores a
/// candidate network on held-out data; lower is better.
pub fn train<T, L, V>(
    init: MlpParams<T>,
    inputs: ArrayView2<T>,
    loss: &L,
    mut validate: V,
    config: &TrainingConfig,
) -> Result<(MlpParams<T>, TrainLog)>
where
    T: Scalar,
    L: OutputLoss<T> + ?Sized,
    V: FnMut(&MlpParams<T>) -> Result<f64>,
{
    config.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(DrnError::invalid("training split is empty"));
    }
    let mut rng = config.train_rng();
    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let mut batch_index = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let mut total = 0.0;
        for rows in make_batches(n, config.batch_size, &mut rng) {
            let x = inputs.select(Axis(0), &rows);
            let masks = (config.dropout_rate > 0.0)
                .then(|| DropoutMasks::sample(&params, rows.len(), config.dropout_rate, &mut rng));
            let batch = Batch {
                index: batch_index,
                inputs: x.view(),
                rows: &rows,
            };
            let (value, grads) = value_and_grad(&params, batch, loss, masks.as_ref())?;
            adam_step(&mut params, &grads, &mut state, config.learning_rate)?;
            total += value.f64() * rows.len() as f64;
            batch_index += 1;
        }
        let train_loss = total / n as f64;
        let val_loss = validate(&params)?;
        if !val_loss.is_finite() {
            return Err(DrnError::Divergence {
                what: "validation loss",
                batch: batch_index,
            });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        if val_loss < best_val - MIN_IMPROVEMENT {
            best_val = val_loss;
            best_epoch = epoch;
            best = params.clone();
        } else if epoch - best_epoch >= config.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    Ok((
        best,
        TrainLog {
            epochs,
            best_epoch,
            best_val_loss: best_val,
            stop_reason,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut p = MlpParams::<f64>::new(vec![array![[0.5]]], vec![array![0.0]], 0.01).unwrap();
        let mut s = AdamState::new(&p);
        let g = Gradients {
            weights: vec![array![[1.0]]],
            biases: vec![array![1.0]],
        };
        adam_step(&mut p, &g, &mut s, 0.001).unwrap();
        assert!((p.weights[0][[0, 0]] - (0.5 - 0.001)).abs() < 1e-10);
        assert!((p.biases[0][0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut p = MlpParams::new(vec![array![[0.5, -0.2]]], vec![array![0.1, 0.3]], 0.01).unwrap();
        let orig = p.clone();
        let mut s = AdamState::new(&p);
        let g = Gradients::zeros_like(&p);
        for _ in 0..50 {
            adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn equal_gradients_update_identically() {
        let mut p = MlpParams::new(vec![array![[0.5, 0.5]]], vec![array![0.0, 0.0]], 0.01).unwrap();
        let mut s = AdamState::new(&p);
        let g = Gradients {
            weights: vec![array![[0.3, 0.3]]],
            biases: vec![array![-2.0, -2.0]],
        };
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        }
        assert_eq!(p.weights[0][[0, 0]], p.weights[0][[0, 1]]);
        assert_eq!(p.biases[0][0], p.biases[0][1]);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut p = MlpParams::<f64>::new(vec![array![[0.5]]], vec![array![0.0]], 0.01).unwrap();
        let mut s = AdamState::new(&p);
        let g = Gradients {
            weights: vec![array![[f64::NAN]]],
            biases: vec![array![0.0]],
        };
        assert!(matches!(
            adam_step(&mut p, &g, &mut s, 0.01),
            Err(DrnError::Divergence { .. })
        ));
    }

    #[test]
    fn batches_partition_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batches(5, 2, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        let again = make_batches(5, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(b, again);
    }

    struct Constant;

    impl OutputLoss<f64> for Constant {
        fn loss_and_grad(&self, out: ArrayView2<f64>, _rows: &[usize]) -> Result<(f64, Array2<f64>)> {
            Ok((1.5, Array2::zeros(out.raw_dim())))
        }
    }

    struct Squares {
        targets: Vec<f64>,
    }

    impl OutputLoss<f64> for Squares {
        fn loss_and_grad(&self, out: ArrayView2<f64>, rows: &[usize]) -> Result<(f64, Array2<f64>)> {
            let n = rows.len() as f64;
            let mut g = Array2::zeros(out.raw_dim());
            let mut v = 0.0;
            for (i, &r) in rows.iter().enumerate() {
                let d = out[[i, 0]] - self.targets[r];
                v += d * d / n;
                g[[i, 0]] = 2.0 * d / n;
            }
            Ok((v, g))
        }
    }

    fn small_config() -> TrainingConfig {
        TrainingConfig {
            max_epochs: 200,
            patience: 5,
            ..TrainingConfig::preset(0.01, 8, 0.0, 1, 8)
        }
    }

    #[test]
    fn constant_loss_stops_after_patience_plus_one() {
        let config = small_config();
        let x = Array2::from_shape_fn((20, 2), |(i, j)| (i + j) as f64 * 0.1);
        let init = MlpParams::init(&[2, 8, 1], &mut config.init_rng());
        let (best, log) = train(
            init.clone(),
            x.view(),
            &Constant,
            |p| evaluate_loss(p, x.view(), &Constant),
            &config,
        )
        .unwrap();
        assert_eq!(log.epochs.len(), config.patience + 1);
        assert_eq!(log.best_epoch, 1);
        assert_eq!(log.stop_reason, StopReason::Patience);
        assert_eq!(best, init);
    }

    #[test]
    fn training_is_deterministic_and_returns_best() {
        let config = TrainingConfig {
            dropout_rate: 0.2,
            ..small_config()
        };
        let x = Array2::from_shape_fn((40, 2), |(i, j)| ((i * 2 + j) as f64 * 0.37).sin());
        let loss = Squares {
            targets: x.rows().into_iter().map(|r| r[0] - 2.0 * r[1]).collect(),
        };
        let run = || {
            let init = MlpParams::init(&[2, 8, 1], &mut config.init_rng());
            train(init, x.view(), &loss, |p| evaluate_loss(p, x.view(), &loss), &config).unwrap()
        };
        let (p1, l1) = run();
        let (p2, l2) = run();
        assert_eq!(p1, p2);
        assert_eq!(l1, l2);
        let min = l1.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(l1.best_val_loss, min);
        assert_eq!(evaluate_loss(&p1, x.view(), &loss).unwrap(), min);
        assert!(l1.best_val_loss < l1.epochs[0].val_loss);
    }

    #[test]
    fn log_csv_has_header() {
        let log = TrainLog {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
            }],
            best_epoch: 1,
            best_val_loss: 0.25,
            stop_reason: StopReason::MaxEpochs,
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss\n1,0.5,0.25\n");
    }

    #[test]
    fn presets_validate() {
        for c in [
            TrainingConfig::drn(),
            TrainingConfig::drn_real_data(),
            TrainingConfig::cann(),
            TrainingConfig::mdn(),
            TrainingConfig::ddr(),
            TrainingConfig::regularization_study(),
        ] {
            c.validate().unwrap();
        }
        assert_eq!(TrainingConfig::drn().learning_rate, 0.00081);
        assert_eq!(TrainingConfig::drn().hidden_sizes(), vec![128, 128, 128]);
        assert!(TrainingConfig {
            dropout_rate: 1.0,
            ..TrainingConfig::drn()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn empty_split_is_rejected() {
        let x = Array2::<f64>::zeros((0, 2));
        let init = MlpParams::zeros(&[2, 3, 1]);
        let r = train(init, x.view(), &Constant, |_| Ok(0.0), &small_config());
        assert!(matches!(r, Err(DrnError::Validation(_))));
    }
}
