use crate::datagen::Dataset;
use crate::diffengine::MlpParams;
use crate::dist::ContinuousDist;
use crate::error::Result;
use crate::glm::GammaGlmModel;
use crate::partition::Partition;
use crate::train::{evaluate_loss, train, StopCriterion, TrainLog, TrainingConfig};

use super::cann::{CannModel, CannObjective};
use super::ddr::{DdrModel, DdrObjective};
use super::mdn::{MdnModel, MdnObjective, Positive};

fn glm_eta(glm: &GammaGlmModel<f64>, data: &Dataset) -> Result<Vec<f64>> {
    (0..data.len()).map(|i| glm.linear_predictor(data.row(i))).collect()
}

fn mean_crps<D: ContinuousDist<f64>>(
    data: &Dataset,
    mut dist: impl FnMut(usize) -> Result<D>,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        total += dist(i)?.crps(data.y[i]);
    }
    Ok(total / data.len() as f64)
}

/// Trains a CANN around a fitted GLM on the gamma deviance.
pub fn fit_cann(
    glm: &GammaGlmModel<f64>,
    train_data: &Dataset,
    val_data: &Dataset,
    config: &TrainingConfig,
) -> Result<(CannModel<f64>, TrainLog)> {
    config.validate()?;
    let model = CannModel::init(glm.clone(), &config.hidden_sizes(), &mut config.init_rng())?;
    let train_eta = glm_eta(glm, train_data)?;
    let val_eta = glm_eta(glm, val_data)?;
    let objective = CannObjective {
        glm_eta: &train_eta,
        y: &train_data.y,
    };
    let val_objective = CannObjective {
        glm_eta: &val_eta,
        y: &val_data.y,
    };
    let validate = |net: &MlpParams<f64>| match config.stop_on {
        StopCriterion::Loss => evaluate_loss(net, val_data.x.view(), &val_objective),
        StopCriterion::Crps => {
            let m = model.with_net(net.clone())?;
            mean_crps(val_data, |i| m.conditional(val_data.row(i)))
        }
    };
    let (net, log) = train(model.net().clone(), train_data.x.view(), &objective, validate, config)?;
    Ok((model.with_net(net)?, log))
}

/// Trains a gamma mixture density network.
pub fn fit_mdn(
    train_data: &Dataset,
    val_data: &Dataset,
    components: usize,
    positive: Positive,
    config: &TrainingConfig,
) -> Result<(MdnModel<f64>, TrainLog)> {
    config.validate()?;
    let model = MdnModel::init(
        train_data.x.ncols(),
        &config.hidden_sizes(),
        components,
        positive,
        &mut config.init_rng(),
    )?;
    let objective = MdnObjective {
        y: &train_data.y,
        components,
        positive,
    };
    let val_objective = MdnObjective {
        y: &val_data.y,
        components,
        positive,
    };
    let validate = |net: &MlpParams<f64>| match config.stop_on {
        StopCriterion::Loss => evaluate_loss(net, val_data.x.view(), &val_objective),
        StopCriterion::Crps => {
            let m = model.with_net(net.clone())?;
            mean_crps(val_data, |i| m.conditional(val_data.row(i)))
        }
    };
    let (net, log) = train(model.net().clone(), train_data.x.view(), &objective, validate, config)?;
    Ok((model.with_net(net)?, log))
}

/// Trains a deep distribution regression histogram on the JBCE.
pub fn fit_ddr(
    partition: Partition<f64>,
    train_data: &Dataset,
    val_data: &Dataset,
    config: &TrainingConfig,
) -> Result<(DdrModel<f64>, TrainLog)> {
    config.validate()?;
    let model = DdrModel::init(
        train_data.x.ncols(),
        partition,
        &config.hidden_sizes(),
        &mut config.init_rng(),
    )?;
    let objective = DdrObjective {
        partition: model.partition(),
        y: &train_data.y,
    };
    let val_objective = DdrObjective {
        partition: model.partition(),
        y: &val_data.y,
    };
    let validate = |net: &MlpParams<f64>| match config.stop_on {
        StopCriterion::Loss => evaluate_loss(net, val_data.x.view(), &val_objective),
        StopCriterion::Crps => {
            let m = model.with_net(net.clone())?;
            mean_crps(val_data, |i| m.conditional(val_data.row(i)))
        }
    };
    let (net, log) = train(model.net().clone(), train_data.x.view(), &objective, validate, config)?;
    Ok((model.with_net(net)?, log))
}
