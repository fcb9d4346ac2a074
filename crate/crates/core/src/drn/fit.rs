use std::sync::Arc;

use crate::datagen::Dataset;
use crate::dist::ContinuousDist;
use crate::drn::{BaselineSummary, DrnModel, RefinedDistribution};
use crate::error::Result;
use crate::glm::GammaGlmModel;
use crate::losses::DrnObjective;
use crate::partition::Partition;
use crate::train::{evaluate_loss, train, StopCriterion, TrainLog, TrainingConfig};

/// Baseline summaries for every row of a dataset.
pub fn summarize(glm: &GammaGlmModel<f64>, partition: &Partition<f64>, data: &Dataset) -> Result<Vec<BaselineSummary<f64>>> {
    (0..data.len())
        .map(|i| Ok(BaselineSummary::new(glm.conditional(data.row(i))?, partition)))
        .collect()
}

/// Trains a refinement network on top of a fitted GLM.
pub fn fit_drn(
    glm: &GammaGlmModel<f64>,
    partition: Partition<f64>,
    train_data: &Dataset,
    val_data: &Dataset,
    config: &TrainingConfig,
) -> Result<(DrnModel<f64>, TrainLog)> {
    config.validate()?;
    let model = DrnModel::init(glm.clone(), partition, &config.hidden_sizes(), &mut config.init_rng())?;
    let partition = model.partition();
    let train_summaries = summarize(glm, partition, train_data)?;
    let val_summaries = summarize(glm, partition, val_data)?;
    let objective = DrnObjective::new(
        partition,
        &train_summaries,
        &train_data.y,
        config.fit_loss,
        config.penalty_weights,
    )?;
    let val_objective = DrnObjective::new(
        partition,
        &val_summaries,
        &val_data.y,
        config.fit_loss,
        config.penalty_weights,
    )?;
    let shared = model.shared_partition();
    let validate = |net: &crate::diffengine::MlpParams<f64>| -> Result<f64> {
        match config.stop_on {
            StopCriterion::Loss => evaluate_loss(net, val_data.x.view(), &val_objective),
            StopCriterion::Crps => {
                let logits = net.forward(val_data.x.view(), None)?;
                let mut total = 0.0;
                for (i, s) in val_summaries.iter().enumerate() {
                    let l = logits.row(i).to_vec();
                    let rd = RefinedDistribution::new(Arc::clone(&shared), s, &l)?;
                    total += rd.crps(val_data.y[i]);
                }
                Ok(total / val_data.len() as f64)
            }
        }
    };
    let (net, log) = train(model.net().clone(), train_data.x.view(), &objective, validate, config)?;
    Ok((model.with_net(net)?, log))
}
