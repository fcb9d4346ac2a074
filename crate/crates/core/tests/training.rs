mod common;

use drn_core::baselines::{fit_mdn, Positive};
use drn_core::diffengine::{DropoutMasks, MlpParams};
use drn_core::drn::fit_drn;
use drn_core::models::FittedModel;
use drn_core::train::TrainingConfig;
use drn_core::ContinuousDist;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick(epochs: usize) -> TrainingConfig {
    TrainingConfig {
        max_epochs: epochs,
        batch_size: 32,
        hidden_layers: 2,
        neurons_per_layer: 16,
        dropout_rate: 0.1,
        learning_rate: 0.005,
        ..TrainingConfig::drn()
    }
}

#[test]
fn inverted_dropout_preserves_the_mean_of_a_linear_readout() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = MlpParams::<f64>::init(&[3, 6, 2], &mut rng);
    let n = 40_000;
    let x = Array2::from_shape_fn((n, 3), |(_, j)| [0.4, -1.1, 0.7][j]);
    let plain = net.forward(x.view(), None).unwrap();
    let masks = DropoutMasks::sample(&net, n, 0.3, &mut rng);
    let dropped = net.forward(x.view(), Some(&masks)).unwrap();
    for k in 0..2 {
        let col = dropped.column(k);
        let mean = col.mean().unwrap();
        let sd = col.std(1.0);
        assert!(
            (mean - plain[[0, k]]).abs() < 4.0 * sd / (n as f64).sqrt(),
            "output {k}: {mean} vs {}",
            plain[[0, k]]
        );
    }
}

#[test]
fn drn_training_loss_falls_over_the_first_epochs() {
    let fx = common::fixture(21);
    let (_, log) = fit_drn(&fx.glm, fx.partition.clone(), &fx.splits.train, &fx.splits.val, &quick(5)).unwrap();
    assert_eq!(log.epochs.len(), 5);
    let first = log.epochs[0].train_loss;
    let last = log.epochs[4].train_loss;
    assert!(last < first, "train loss {first} -> {last}");
    assert!(log.epochs.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));
}

#[test]
fn fitted_models_survive_a_json_round_trip() {
    let fx = common::fixture(22);
    let (drn, _) = fit_drn(&fx.glm, fx.partition.clone(), &fx.splits.train, &fx.splits.val, &quick(2)).unwrap();
    let (mdn, _) = fit_mdn(&fx.splits.train, &fx.splits.val, 3, Positive::Exp, &quick(2)).unwrap();
    for model in [FittedModel::Glm(fx.glm.clone()), FittedModel::Drn(drn), FittedModel::Mdn(mdn)] {
        let json = serde_json::to_string(&model).unwrap();
        let back: FittedModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
        let x = fx.splits.test.row(3);
        let (a, b) = (model.predict(x).unwrap(), back.predict(x).unwrap());
        for y in [0.3, 1.0, 2.5] {
            assert_eq!(a.cdf(y).to_bits(), b.cdf(y).to_bits());
        }
    }
}

#[test]
fn batch_prediction_matches_row_by_row() {
    let fx = common::fixture(23);
    let (drn, _) = fit_drn(&fx.glm, fx.partition.clone(), &fx.splits.train, &fx.splits.val, &quick(2)).unwrap();
    let model = FittedModel::Drn(drn);
    let batch = model.predict_batch(fx.splits.test.x.view()).unwrap();
    for (i, d) in batch.iter().enumerate() {
        let single = model.predict(fx.splits.test.row(i)).unwrap();
        assert!((d.mean() - single.mean()).abs() < 1e-12);
        assert!((d.cdf(1.0) - single.cdf(1.0)).abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let fx = common::fixture(24);
    let fit = || fit_drn(&fx.glm, fx.partition.clone(), &fx.splits.train, &fx.splits.val, &quick(3)).unwrap();
    let (a, log_a) = fit();
    let (b, log_b) = fit();
    assert_eq!(log_a, log_b);
    assert_eq!(a.net(), b.net());
}
