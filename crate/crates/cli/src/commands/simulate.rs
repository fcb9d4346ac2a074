use drn_core::datagen::{gen_synthetic_main, gen_synthetic_reg, load_csv, preprocess_tabular, Recipe, SplitTag};
use serde::Serialize;

use crate::artifacts::{dataset_hash, stamped_file, write_json, DatasetRecord, Layout, Stamp};
use crate::config::{Config, DataSource};
use crate::error::CliError;

#[derive(Serialize)]
struct EncoderFile<'a> {
    encoder: &'a drn_core::datagen::TabularEncoder,
}

/// Generates or preprocesses the data and writes the three splits.
pub fn run(config: &Config) -> Result<(), CliError> {
    let layout = Layout::new(&config.output);
    let dir = layout.dir("data")?;
    let stamp = Stamp::of(config);
    let seed = config.data_seed();
    let (splits, encoder) = match &config.data {
        DataSource::Synthetic(s) => (gen_synthetic_main(s.n_train, s.n_val, s.n_test, seed)?, None),
        DataSource::Regularization(s) => (gen_synthetic_reg(s.n, seed)?.shift_response(s.shift), None),
        DataSource::Csv(s) => {
            let table_path = config.resolve_path(&s.path);
            if !table_path.exists() {
                return Err(CliError::Config(format!("data file {} does not exist", table_path.display())));
            }
            let recipe_path = config.resolve_path(&s.recipe);
            let text = std::fs::read_to_string(&recipe_path)
                .map_err(|e| CliError::Config(format!("cannot read recipe {}: {e}", recipe_path.display())))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            let recipe: Recipe = serde_path_to_error::deserialize(de).map_err(|e| {
                CliError::Config(format!("{}: field `{}`: {}", recipe_path.display(), e.path(), e.inner()))
            })?;
            let table = load_csv(&table_path)?;
            let (splits, encoder) = preprocess_tabular(&table, &recipe, seed)?;
            (splits, Some(encoder))
        }
    };

    for (tag, data) in [(SplitTag::Train, &splits.train), (SplitTag::Val, &splits.val), (SplitTag::Test, &splits.test)] {
        data.write_to(stamped_file(&layout.split(tag), &stamp)?)?;
    }
    let mut meta = splits.meta(config.data.name());
    if let DataSource::Regularization(s) = &config.data {
        meta.conventions.insert("response_shift".into(), s.shift.to_string());
    }
    let feature_groups = match &encoder {
        Some(e) => e.feature_groups(),
        None => meta.feature_names.iter().enumerate().map(|(j, n)| (n.clone(), vec![j])).collect(),
    };
    match &encoder {
        Some(e) => write_json(&layout.encoder(), &stamp, &EncoderFile { encoder: e })?,
        None if layout.encoder().exists() => std::fs::remove_file(layout.encoder())?,
        None => {}
    }
    let record = DatasetRecord {
        dataset_hash: dataset_hash(&layout)?,
        meta,
        feature_groups,
    };
    write_json(&layout.dataset_record(), &stamp, &record)?;
    log::info!(
        "wrote {} / {} / {} rows to {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        dir.display()
    );
    Ok(())
}
