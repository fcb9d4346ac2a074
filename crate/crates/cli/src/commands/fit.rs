use drn_core::baselines::{fit_cann, fit_ddr, fit_mdn};
use drn_core::datagen::Splits;
use drn_core::drn::fit_drn;
use drn_core::glm::{fit_gamma_glm, GammaGlmModel};
use drn_core::models::{FittedModel, ModelKind};
use drn_core::train::TrainLog;
use ndarray::ArrayView1;

use crate::artifacts::{load_bundle, load_data, stamped_file, write_document, Bundle, Layout, Stamp};
use crate::config::Config;
use crate::error::CliError;

/// Fits the gamma GLM by IRLS on the training split.
pub fn fit_glm(splits: &Splits) -> Result<GammaGlmModel<f64>, CliError> {
    let train = &splits.train;
    let fit = fit_gamma_glm(train.x.view(), ArrayView1::from(&train.y), train.feature_names.clone())?;
    if !fit.converged {
        log::warn!("IRLS stopped after {} iterations without converging", fit.iterations);
    }
    Ok(fit.model)
}

/// Trains one network model. `glm` is required for CANN and DRN.
pub fn fit_network(
    kind: ModelKind,
    config: &Config,
    training: &drn_core::train::TrainingConfig,
    splits: &Splits,
    glm: Option<&GammaGlmModel<f64>>,
) -> Result<(FittedModel, TrainLog), CliError> {
    let (train, val) = (&splits.train, &splits.val);
    let need_glm = || glm.ok_or_else(|| CliError::missing(format!("{kind} refines a fitted GLM"), "fit --models glm"));
    Ok(match kind {
        ModelKind::Glm => unreachable!("the GLM is not a network"),
        ModelKind::Cann => {
            let (m, log) = fit_cann(need_glm()?, train, val, training)?;
            (FittedModel::Cann(m), log)
        }
        ModelKind::Mdn => {
            let (m, log) = fit_mdn(train, val, config.mdn.components, config.mdn.positive, training)?;
            (FittedModel::Mdn(m), log)
        }
        ModelKind::Ddr => {
            let partition = config.partition[&kind].build(&train.y)?;
            let (m, log) = fit_ddr(partition, train, val, training)?;
            (FittedModel::Ddr(m), log)
        }
        ModelKind::Drn => {
            let partition = config.partition[&kind].build(&train.y)?;
            let (m, log) = fit_drn(need_glm()?, partition, train, val, training)?;
            (FittedModel::Drn(m), log)
        }
    })
}

/// Fits every configured model and writes one bundle per model.
pub fn run(config: &Config) -> Result<(), CliError> {
    let layout = Layout::new(&config.output);
    let data = load_data(&layout)?;
    layout.dir("models")?;
    let stamp = Stamp::of(config);
    let bundle = |model: FittedModel| Bundle {
        config_hash: stamp.config_hash.clone(),
        seed: config.seed,
        dataset_hash: data.record.dataset_hash.clone(),
        model,
    };

    let needs_glm = config.models.iter().any(|k| matches!(k, ModelKind::Glm | ModelKind::Cann | ModelKind::Drn));
    let glm = if config.wants(ModelKind::Glm) {
        let glm = fit_glm(&data.splits)?;
        write_document(&layout.bundle(ModelKind::Glm), &bundle(FittedModel::Glm(glm.clone())))?;
        log::info!("glm: dispersion {:.6}", glm.phi);
        Some(glm)
    } else if needs_glm {
        let path = match &config.glm_bundle {
            Some(p) => config.resolve_path(p),
            None => layout.bundle(ModelKind::Glm),
        };
        if !path.exists() {
            return Err(CliError::missing(
                format!("CANN and DRN refine a fitted GLM and there is no bundle at {}", path.display()),
                "fit --models glm",
            ));
        }
        match load_bundle(&path, ModelKind::Glm, &data.record.dataset_hash)?.model {
            FittedModel::Glm(g) => Some(g),
            _ => unreachable!("kind checked on load"),
        }
    } else {
        None
    };

    for &kind in config.models.iter().filter(|&&k| k != ModelKind::Glm) {
        let training = &config.training[&kind];
        log::info!("{kind}: training");
        let (model, log) = fit_network(kind, config, training, &data.splits, glm.as_ref())?;
        log::info!(
            "{kind}: best epoch {} of {}, validation loss {:.6}",
            log.best_epoch,
            log.epochs.len(),
            log.best_val_loss
        );
        log.write_csv(stamped_file(&layout.training_log(kind), &stamp)?)?;
        write_document(&layout.bundle(kind), &bundle(model))?;
    }
    Ok(())
}
