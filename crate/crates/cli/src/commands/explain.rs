use drn_core::explain::{
    adjustment_target, dependence, grouped_players, importance, kernel_shap, model_target, singleton_players,
    write_csv, Background, Player, ShapExplanation, ShapOptions, Target,
};
use drn_core::models::{FittedModel, ModelKind};
use serde::Serialize;

use crate::artifacts::{load_bundle, load_data, stamped_csv, stamped_file, write_json, Layout, Stamp};
use crate::config::{Config, ExplainRequest};
use crate::error::CliError;

#[derive(Serialize)]
struct ExplanationFile<'a> {
    request: &'a ExplainRequest,
    /// Absent players take values from the background rows.
    value_function: &'static str,
    background_rows: usize,
    instances: &'a [usize],
    players: &'a [Player],
    importance: Vec<f64>,
    explanations: &'a [ShapExplanation],
}

fn file_stem(index: usize, req: &ExplainRequest) -> String {
    let target = match req.target {
        Target::Mean => "mean".to_string(),
        Target::Quantile { level } => format!("q{level}"),
    };
    let kind = if req.adjustment { "_adjustment" } else { "" };
    format!("{index:02}_{}_{target}{kind}", req.model)
}

/// Runs every configured explanation request against the test split.
pub fn run(config: &Config) -> Result<(), CliError> {
    if config.explain.is_empty() {
        return Err(CliError::Config("no explanation requests under `explain`".into()));
    }
    let layout = Layout::new(&config.output);
    let data = load_data(&layout)?;
    let dir = layout.dir("explain")?;
    let stamp = Stamp::of(config);
    let hash = &data.record.dataset_hash;
    let (train, test) = (&data.splits.train, &data.splits.test);

    for (r, req) in config.explain.iter().enumerate() {
        if let Some(&i) = req.instances.iter().find(|&&i| i >= test.len()) {
            return Err(CliError::Config(format!(
                "explain[{r}].instances: row {i} is beyond the {} test rows",
                test.len()
            )));
        }
        let players = if req.group_categorical {
            grouped_players(data.record.feature_groups.clone())
        } else {
            singleton_players(&test.feature_names)
        };
        let color = match &req.dependence_color {
            Some(name) => Some(players.iter().position(|p| &p.name == name).ok_or_else(|| {
                CliError::Config(format!("explain[{r}].dependence_color: no player named `{name}`"))
            })?),
            None => None,
        };
        let model = load_bundle(&layout.bundle(req.model), req.model, hash)?.model;
        let glm: Option<FittedModel> = if req.adjustment {
            Some(load_bundle(&layout.bundle(ModelKind::Glm), ModelKind::Glm, hash)?.model)
        } else {
            None
        };
        let seed = req.seed.unwrap_or(config.seed);
        let background = Background::sample(train.x.view(), req.background, seed)?;
        let options = ShapOptions {
            coalition_samples: req.coalition_samples,
            seed,
        };
        let name = match &glm {
            Some(_) => format!("{} {} minus glm", req.model, req.target.describe()),
            None => format!("{} {}", req.model, req.target.describe()),
        };
        let mut explanations = Vec::with_capacity(req.instances.len());
        for &i in &req.instances {
            let x = test.row(i);
            let e = match &glm {
                Some(g) => kernel_shap(&adjustment_target(&model, g, req.target), &name, x, &background, &players, &options)?,
                None => kernel_shap(&model_target(&model, req.target), &name, x, &background, &players, &options)?,
            };
            explanations.push(e);
        }
        log::info!("explained {} rows for `{name}`", explanations.len());

        let stem = file_stem(r, req);
        let imp = importance(&explanations);
        let file = ExplanationFile {
            request: req,
            value_function: "interventional",
            background_rows: background.len(),
            instances: &req.instances,
            players: &players,
            importance: imp.clone(),
            explanations: &explanations,
        };
        write_json(&dir.join(format!("{stem}.json")), &stamp, &file)?;
        write_csv(&explanations, stamped_file(&dir.join(format!("{stem}_shap.csv")), &stamp)?)?;

        let mut w = stamped_csv(&dir.join(format!("{stem}_importance.csv")), &stamp)?;
        w.write_record(["feature", "mean_abs_phi"])?;
        let mut order: Vec<usize> = (0..players.len()).collect();
        order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]));
        for j in order {
            w.write_record([players[j].name.clone(), imp[j].to_string()])?;
        }
        w.flush()?;

        let rows = test.x.select(ndarray::Axis(0), &req.instances);
        let mut w = stamped_csv(&dir.join(format!("{stem}_dependence.csv")), &stamp)?;
        w.write_record(["row", "feature", "value", "phi", "color"])?;
        for (j, p) in players.iter().enumerate() {
            for (point, &i) in dependence(&explanations, rows.view(), &players, j, color).iter().zip(&req.instances) {
                w.write_record([
                    i.to_string(),
                    p.name.clone(),
                    point.value.to_string(),
                    point.phi.to_string(),
                    point.color.map_or(String::new(), |c| c.to_string()),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}
