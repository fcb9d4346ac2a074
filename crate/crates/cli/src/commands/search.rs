use drn_core::datagen::Splits;
use drn_core::losses::PenaltyWeights;
use drn_core::metrics::score;
use drn_core::models::ModelKind;
use drn_core::partition::PartitionConfig;
use drn_core::train::TrainingConfig;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::artifacts::{load_data, stamped_csv, write_json, Layout, Stamp};
use crate::commands::fit::{fit_glm, fit_network};
use crate::config::{Config, DataSource};
use crate::error::CliError;

/// Hyperparameter ranges for one model family.
#[derive(Debug, Clone)]
struct SearchSpace {
    learning_rate: (f64, f64),
    batch_sizes: &'static [usize],
    dropout: (f64, f64),
    layers: (usize, usize),
    neurons: &'static [usize],
    components: (usize, usize),
    proportions: &'static [f64],
    min_obs: &'static [usize],
    kl: (f64, f64),
    roughness: &'static [f64],
    mean: &'static [f64],
}

impl SearchSpace {
    /// Ranges for the simulated data.
    fn synthetic(kind: ModelKind) -> Self {
        Self {
            learning_rate: (0.0002, 0.01),
            batch_sizes: &[128, 256, 512],
            dropout: (0.0, 0.5),
            layers: (1, 4),
            neurons: &[16, 32, 64, 128, 256, 512],
            components: (1, 10),
            proportions: match kind {
                ModelKind::Ddr => &[0.01, 0.0125, 0.015, 0.0175, 0.02, 0.0225, 0.025, 0.0275, 0.03],
                _ => &[0.02, 0.0225, 0.025, 0.0275, 0.03],
            },
            min_obs: &[1, 3, 5],
            kl: (1e-5, 0.1),
            roughness: &[1e-3, 1e-2, 1e-1],
            mean: &[1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
        }
    }

    /// Ranges for tabular insurance data.
    fn tabular(kind: ModelKind) -> Self {
        Self {
            learning_rate: match kind {
                ModelKind::Cann | ModelKind::Mdn => (0.0001, 0.01),
                ModelKind::Drn => (0.0002, 0.1),
                _ => (0.0002, 0.01),
            },
            batch_sizes: &[64, 128, 256, 512],
            dropout: (0.0, 0.5),
            layers: (1, 6),
            neurons: &[32, 64, 128, 256, 512],
            components: (2, 10),
            proportions: match kind {
                ModelKind::Ddr => &[0.05, 0.075, 0.1, 0.125, 0.15],
                _ => &[0.1, 0.125, 0.15],
            },
            min_obs: &[1, 3, 5],
            kl: (1e-6, 0.1),
            roughness: &[0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            mean: &[0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct Candidate {
    training: TrainingConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    partition: Option<PartitionConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mdn_components: Option<usize>,
}

fn sample(kind: ModelKind, space: &SearchSpace, base: &TrainingConfig, base_partition: PartitionConfig, rng: &mut ChaCha8Rng) -> Candidate {
    let mut training = TrainingConfig {
        learning_rate: rng.random_range(space.learning_rate.0..=space.learning_rate.1),
        batch_size: *space.batch_sizes.choose(rng).unwrap(),
        dropout_rate: rng.random_range(space.dropout.0..space.dropout.1),
        hidden_layers: rng.random_range(space.layers.0..=space.layers.1),
        neurons_per_layer: *space.neurons.choose(rng).unwrap(),
        ..base.clone()
    };
    let mut partition = None;
    let mut mdn_components = None;
    match kind {
        ModelKind::Drn => {
            training.penalty_weights = PenaltyWeights {
                kl: rng.random_range(space.kl.0..=space.kl.1),
                roughness: *space.roughness.choose(rng).unwrap(),
                mean: *space.mean.choose(rng).unwrap(),
            };
            partition = Some(PartitionConfig {
                proportion: *space.proportions.choose(rng).unwrap(),
                min_obs: *space.min_obs.choose(rng).unwrap(),
                ..base_partition
            });
        }
        ModelKind::Ddr => {
            partition = Some(PartitionConfig {
                proportion: *space.proportions.choose(rng).unwrap(),
                ..base_partition
            });
        }
        ModelKind::Mdn => mdn_components = Some(rng.random_range(space.components.0..=space.components.1)),
        ModelKind::Cann | ModelKind::Glm => {}
    }
    Candidate {
        training,
        partition,
        mdn_components,
    }
}

/// Validation CRPS of one candidate, or the reason it failed.
fn evaluate(kind: ModelKind, config: &Config, cand: &Candidate, splits: &Splits, glm: &drn_core::Glm) -> Result<(f64, usize), CliError> {
    let mut trial = config.clone();
    if let Some(p) = cand.partition {
        trial.partition.insert(kind, p);
    }
    if let Some(c) = cand.mdn_components {
        trial.mdn.components = c;
    }
    let (model, log) = fit_network(kind, &trial, &cand.training, splits, Some(glm))?;
    let dists = model.predict_batch(splits.val.x.view())?;
    let s = score(&dists, &splits.val.y, config.evaluation.quantile_level)?;
    Ok((s.crps, log.best_epoch))
}

#[derive(Serialize)]
struct Best<'a> {
    model: ModelKind,
    trial: usize,
    val_crps: f64,
    #[serde(flatten)]
    candidate: &'a Candidate,
}

/// Random search over the published ranges, scored by validation CRPS.
pub fn run(config: &Config, budget: Option<usize>) -> Result<(), CliError> {
    let settings = &config.random_search;
    let kind = settings.model;
    let budget = budget.unwrap_or(settings.budget);
    if budget == 0 {
        return Err(CliError::Config("random-search budget must be positive".into()));
    }
    let layout = Layout::new(&config.output);
    let data = load_data(&layout)?;
    let dir = layout.dir("search")?;
    let stamp = Stamp::of(config);
    let space = match config.data {
        DataSource::Csv(_) => SearchSpace::tabular(kind),
        _ => SearchSpace::synthetic(kind),
    };
    let mut base = config.training[&kind].clone();
    if let Some(cap) = settings.max_epochs {
        base.max_epochs = cap;
    }
    let base_partition = config.partition.get(&kind).copied().unwrap_or_else(PartitionConfig::drn);
    let glm = fit_glm(&data.splits)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.unwrap_or(config.seed));

    let mut w = stamped_csv(&dir.join(format!("{kind}_trials.csv")), &stamp)?;
    w.write_record([
        "trial",
        "learning_rate",
        "batch_size",
        "dropout_rate",
        "hidden_layers",
        "neurons_per_layer",
        "proportion",
        "min_obs",
        "kl",
        "roughness",
        "mean",
        "components",
        "best_epoch",
        "val_crps",
        "error",
    ])?;
    let mut best: Option<(usize, f64, Candidate)> = None;
    for t in 0..budget {
        let cand = sample(kind, &space, &base, base_partition, &mut rng);
        let outcome = evaluate(kind, config, &cand, &data.splits, &glm);
        let (epoch, crps, error) = match &outcome {
            Ok((crps, epoch)) => (epoch.to_string(), crps.to_string(), String::new()),
            Err(CliError::Numerical(msg)) => (String::new(), String::new(), msg.clone()),
            Err(_) => return outcome.map(|_| ()),
        };
        let opt = |v: Option<String>| v.unwrap_or_default();
        let tc = &cand.training;
        w.write_record([
            t.to_string(),
            tc.learning_rate.to_string(),
            tc.batch_size.to_string(),
            tc.dropout_rate.to_string(),
            tc.hidden_layers.to_string(),
            tc.neurons_per_layer.to_string(),
            opt(cand.partition.map(|p| p.proportion.to_string())),
            opt(cand.partition.map(|p| p.min_obs.to_string())),
            tc.penalty_weights.kl.to_string(),
            tc.penalty_weights.roughness.to_string(),
            tc.penalty_weights.mean.to_string(),
            opt(cand.mdn_components.map(|c| c.to_string())),
            epoch,
            crps,
            error,
        ])?;
        if let Ok((crps, _)) = outcome {
            log::info!("trial {t}: validation crps {crps:.5}");
            if best.as_ref().is_none_or(|b| crps < b.1) {
                best = Some((t, crps, cand));
            }
        } else {
            log::warn!("trial {t} failed");
        }
    }
    w.flush()?;
    let (trial, val_crps, candidate) =
        best.ok_or_else(|| CliError::Numerical(format!("all {budget} trials failed")))?;
    write_json(
        &dir.join(format!("{kind}_best.json")),
        &stamp,
        &Best {
            model: kind,
            trial,
            val_crps,
            candidate: &candidate,
        },
    )?;
    Ok(())
}
