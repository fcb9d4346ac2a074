use std::collections::BTreeMap;

use drn_core::datagen::Dataset;
use drn_core::metrics::{
    calibration_curve, calibration_grid, calibration_score, compare, pit_values, qq_pairs, quantile_residuals, score,
    Comparison, ModelScores,
};
use drn_core::models::{AnyDist, ModelKind};
use drn_core::ContinuousDist;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::artifacts::{load_bundle, load_data, stamped_csv, write_json, Layout, Stamp};
use crate::config::Config;
use crate::error::CliError;

/// Quantile range spanned by the density grid of each instance.
const DENSITY_RANGE: (f64, f64) = (0.001, 0.999);

#[derive(Serialize)]
struct SplitReport {
    /// Aggregate metrics per model.
    models: BTreeMap<String, Map<String, Value>>,
    /// One-sided Wilcoxon tests against the reference model.
    significance: BTreeMap<String, Comparison>,
    /// Mean squared gap between nominal and empirical PIT coverage.
    calibration_score: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Report {
    dataset_hash: String,
    quantile_level: f64,
    reference: Option<String>,
    metrics: Vec<&'static str>,
    val: SplitReport,
    test: SplitReport,
}

struct Evaluated {
    kind: ModelKind,
    test_dists: Vec<AnyDist>,
    scores: [ModelScores; 2],
    pit: [Vec<f64>; 2],
}

fn split_report(config: &Config, evaluated: &[Evaluated], which: usize) -> SplitReport {
    let reference = evaluated.iter().find(|e| e.kind == config.evaluation.reference);
    let mut models = BTreeMap::new();
    let mut significance = BTreeMap::new();
    let mut calibration = BTreeMap::new();
    let keep: Vec<&str> = config.metrics.iter().map(|m| m.as_str()).collect();
    for e in evaluated {
        let summary = serde_json::to_value(e.scores[which].summary()).expect("scores serialize");
        let Value::Object(mut fields) = summary else {
            unreachable!("summary is a struct")
        };
        fields.retain(|k, _| keep.contains(&k.as_str()));
        models.insert(e.kind.to_string(), fields);
        calibration.insert(e.kind.to_string(), calibration_score(&e.pit[which]));
        if let Some(r) = reference.filter(|r| r.kind != e.kind) {
            let mut c = compare(&e.scores[which], &r.scores[which], r.kind.as_str());
            c.p_values.retain(|k, _| keep.contains(&k.as_str()));
            c.stars.retain(|k, _| keep.contains(&k.as_str()));
            significance.insert(e.kind.to_string(), c);
        }
    }
    SplitReport {
        models,
        significance,
        calibration_score: calibration,
    }
}

fn density_grid(dists: &[&AnyDist], points: usize) -> Result<Vec<f64>, CliError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for d in dists {
        lo = lo.min(d.quantile(DENSITY_RANGE.0)?);
        hi = hi.max(d.quantile(DENSITY_RANGE.1)?);
    }
    let lo = lo.max(0.0);
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| lo + step * i as f64).collect())
}

fn predict(bundle: &drn_core::models::FittedModel, data: &Dataset) -> Result<Vec<AnyDist>, CliError> {
    Ok(bundle.predict_batch(data.x.view())?)
}

/// Scores every configured model on the validation and test splits.
pub fn run(config: &Config) -> Result<(), CliError> {
    let layout = Layout::new(&config.output);
    let data = load_data(&layout)?;
    let dir = layout.dir("eval")?;
    let stamp = Stamp::of(config);
    let hash = &data.record.dataset_hash;
    let q = config.evaluation.quantile_level;
    let (val, test) = (&data.splits.val, &data.splits.test);
    for &i in &config.evaluation.density_instances {
        if i >= test.len() {
            return Err(CliError::Config(format!(
                "evaluation.density_instances: row {i} is beyond the {} test rows",
                test.len()
            )));
        }
    }

    let mut evaluated = Vec::new();
    for &kind in &config.models {
        let bundle = load_bundle(&layout.bundle(kind), kind, hash)?;
        let val_dists = predict(&bundle.model, val)?;
        let test_dists = predict(&bundle.model, test)?;
        let scores = [score(&val_dists, &val.y, q)?, score(&test_dists, &test.y, q)?];
        let pit = [pit_values(&val_dists, &val.y)?, pit_values(&test_dists, &test.y)?];
        log::info!("{kind}: test crps {:.4}, nll {:.4}", scores[1].crps, scores[1].nll);
        evaluated.push(Evaluated {
            kind,
            test_dists,
            scores,
            pit,
        });
    }

    let has_reference = evaluated.iter().any(|e| e.kind == config.evaluation.reference);
    let report = Report {
        dataset_hash: hash.clone(),
        quantile_level: q,
        reference: has_reference.then(|| config.evaluation.reference.to_string()),
        metrics: config.metrics.iter().map(|m| m.as_str()).collect(),
        val: split_report(config, &evaluated, 0),
        test: split_report(config, &evaluated, 1),
    };
    write_json(&dir.join("metrics.json"), &stamp, &report)?;

    let mut w = stamped_csv(&dir.join("observations.csv"), &stamp)?;
    w.write_record(["split", "row", "model", "nll", "crps", "squared_error", "quantile_loss", "pit"])?;
    for (which, split) in ["val", "test"].into_iter().enumerate() {
        for e in &evaluated {
            let o = &e.scores[which].observations;
            for i in 0..o.crps.len() {
                w.write_record([
                    split.to_string(),
                    i.to_string(),
                    e.kind.to_string(),
                    o.nll[i].to_string(),
                    o.crps[i].to_string(),
                    o.squared_error[i].to_string(),
                    o.quantile_loss[i].to_string(),
                    e.pit[which][i].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;

    let mut w = stamped_csv(&dir.join("density.csv"), &stamp)?;
    let mut header = vec!["instance".to_string(), "y".to_string()];
    header.extend(evaluated.iter().map(|e| e.kind.to_string()));
    w.write_record(&header)?;
    for &i in &config.evaluation.density_instances {
        let dists: Vec<&AnyDist> = evaluated.iter().map(|e| &e.test_dists[i]).collect();
        for y in density_grid(&dists, config.evaluation.density_points)? {
            let mut rec = vec![i.to_string(), y.to_string()];
            rec.extend(dists.iter().map(|d| d.pdf(y).to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;

    let mut cal = stamped_csv(&dir.join("calibration.csv"), &stamp)?;
    cal.write_record(["model", "nominal", "empirical"])?;
    let mut qq = stamped_csv(&dir.join("qq.csv"), &stamp)?;
    qq.write_record(["model", "theoretical", "sample"])?;
    let grid = calibration_grid();
    for e in &evaluated {
        for (nominal, empirical) in calibration_curve(&e.pit[1], &grid) {
            cal.write_record([e.kind.to_string(), nominal.to_string(), empirical.to_string()])?;
        }
        for (t, s) in qq_pairs(&quantile_residuals(&e.pit[1])) {
            qq.write_record([e.kind.to_string(), t.to_string(), s.to_string()])?;
        }
    }
    cal.flush()?;
    qq.flush()?;
    Ok(())
}
