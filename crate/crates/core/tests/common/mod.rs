#![allow(dead_code)]

use drn_core::baselines::{CannObjective, DdrObjective, MdnObjective, Positive};
use drn_core::datagen::{gen_synthetic_main, Splits};
use drn_core::diffengine::{finite_diff_check, Batch, MlpParams, OutputLoss};
use drn_core::drn::{summarize, BaselineSummary};
use drn_core::glm::{fit_gamma_glm, GammaGlmModel};
use drn_core::losses::{DrnObjective, FitLoss, PenaltyWeights};
use drn_core::partition::{Partition, PartitionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-5;
pub const FD_POINTS: u64 = 10;
const KINK_MARGIN: f64 = 1e-4;

pub struct Fixture {
    pub splits: Splits,
    pub glm: GammaGlmModel<f64>,
    pub partition: Partition<f64>,
    pub summaries: Vec<BaselineSummary<f64>>,
    pub glm_eta: Vec<f64>,
    pub rows: Vec<usize>,
}

pub fn fixture(seed: u64) -> Fixture {
    let splits = gen_synthetic_main(300, 50, 50, seed).unwrap();
    let train = &splits.train;
    let glm = fit_gamma_glm(train.x.view(), ndarray::ArrayView1::from(&train.y), train.feature_names.clone())
        .unwrap()
        .model;
    let partition = PartitionConfig::drn().build(&train.y).unwrap();
    let summaries = summarize(&glm, &partition, train).unwrap();
    let glm_eta = (0..train.len())
        .map(|i| glm.linear_predictor(train.row(i)).unwrap())
        .collect();
    let rows = (0..32).map(|i| i * 7).collect();
    Fixture {
        splits,
        glm,
        partition,
        summaries,
        glm_eta,
        rows,
    }
}

/// Smallest |pre-activation| over the hidden layers.
fn kink_distance(net: &MlpParams<f64>, x: &ndarray::Array2<f64>) -> f64 {
    let mut h = x.clone();
    let mut closest = f64::INFINITY;
    let layers = net.weights.len();
    for (i, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
        let pre = h.dot(w) + b;
        if i + 1 == layers {
            break;
        }
        closest = pre.iter().fold(closest, |m, v| m.min(v.abs()));
        h = pre.mapv(|v| if v < 0.0 { net.leaky_slope * v } else { v });
    }
    closest
}

/// A random parameter point away from the activation kinks.
pub fn random_point(sizes: &[usize], x: &ndarray::Array2<f64>, seed: u64) -> MlpParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = MlpParams::init(sizes, &mut rng);
    for b in net.biases.iter_mut() {
        b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    while kink_distance(&net, x) < KINK_MARGIN {
        for b in net.biases.iter_mut() {
            b.mapv_inplace(|v| v + rng.random_range(-1e-2..1e-2));
        }
    }
    net
}

/// Worst finite-difference discrepancy over `FD_POINTS` random points.
pub fn worst_fd_error<L: OutputLoss<f64>>(fx: &Fixture, out_dim: usize, loss: &L) -> f64 {
    let x = fx.splits.train.x.select(ndarray::Axis(0), &fx.rows);
    let sizes = [x.ncols(), 8, 8, out_dim];
    (0..FD_POINTS)
        .map(|s| {
            let net = random_point(&sizes, &x, 1000 + s);
            let batch = Batch {
                index: 0,
                inputs: x.view(),
                rows: &fx.rows,
            };
            finite_diff_check(&net, batch, loss, None, FD_STEP).unwrap()
        })
        .fold(0.0, f64::max)
}

/// Worst discrepancy for every training loss, by name.
pub fn gradient_suite(fx: &Fixture) -> Vec<(&'static str, f64)> {
    let train = &fx.splits.train;
    let k = fx.partition.len();
    let drn = |fit, w| DrnObjective::new(&fx.partition, &fx.summaries, &train.y, fit, w).unwrap();
    let composite = PenaltyWeights::new(0.00047, 0.1, 0.01).unwrap();
    vec![
        ("drn nll", worst_fd_error(fx, k, &drn(FitLoss::Nll, PenaltyWeights::default()))),
        ("drn jbce", worst_fd_error(fx, k, &drn(FitLoss::Jbce, PenaltyWeights::default()))),
        ("drn composite", worst_fd_error(fx, k, &drn(FitLoss::Jbce, composite))),
        (
            "cann deviance",
            worst_fd_error(
                fx,
                2,
                &CannObjective {
                    glm_eta: &fx.glm_eta,
                    y: &train.y,
                },
            ),
        ),
        (
            "mdn nll",
            worst_fd_error(
                fx,
                9,
                &MdnObjective {
                    y: &train.y,
                    components: 3,
                    positive: Positive::Exp,
                },
            ),
        ),
        (
            "mdn nll softplus",
            worst_fd_error(
                fx,
                9,
                &MdnObjective {
                    y: &train.y,
                    components: 3,
                    positive: Positive::Softplus,
                },
            ),
        ),
        (
            "ddr jbce",
            worst_fd_error(
                fx,
                k,
                &DdrObjective {
                    partition: &fx.partition,
                    y: &train.y,
                },
            ),
        ),
    ]
}
