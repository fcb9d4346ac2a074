//! Output layout, stamped writers, dataset records and model bundles.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use drn_core::datagen::{Dataset, DatasetMeta, SplitTag, Splits};
use drn_core::models::{FittedModel, ModelKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, Config};
use crate::error::CliError;

const SPLITS: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

/// Where each command reads and writes under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir(&self, name: &str) -> Result<PathBuf, CliError> {
        let d = self.root.join(name);
        std::fs::create_dir_all(&d)?;
        Ok(d)
    }

    pub fn split(&self, tag: SplitTag) -> PathBuf {
        self.root.join("data").join(format!("{}.csv", tag.as_str()))
    }

    pub fn dataset_record(&self) -> PathBuf {
        self.root.join("data").join("dataset.json")
    }

    pub fn encoder(&self) -> PathBuf {
        self.root.join("data").join("encoder.json")
    }

    pub fn bundle(&self, kind: ModelKind) -> PathBuf {
        self.root.join("models").join(format!("{kind}.json"))
    }

    pub fn training_log(&self, kind: ModelKind) -> PathBuf {
        self.root.join("models").join(format!("{kind}_training.csv"))
    }
}

/// Provenance carried by every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn of(config: &Config) -> Self {
        Self {
            config_hash: config.hash(),
            seed: config.seed,
        }
    }

    fn comment(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

/// A JSON document with the stamp fields first.
#[derive(Serialize)]
struct Stamped<'a, T> {
    #[serde(flatten)]
    stamp: &'a Stamp,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, stamp: &Stamp, body: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(&Stamped { stamp, body }).map_err(|e| CliError::Other(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// JSON for documents that carry their own provenance fields.
pub fn write_document<T: Serialize>(path: &Path, body: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(body).map_err(|e| CliError::Other(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Other(format!("{}: field `{}`: {}", path.display(), e.path(), e.inner())))
}

/// A file whose first line is the stamp as a `#` comment.
pub fn stamped_file(path: &Path, stamp: &Stamp) -> Result<BufWriter<File>, CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(stamp.comment().as_bytes())?;
    Ok(w)
}

/// CSV writer under a stamp comment.
pub fn stamped_csv(path: &Path, stamp: &Stamp) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(stamped_file(path, stamp)?))
}

/// Written by `simulate` next to the split files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dataset_hash: String,
    pub meta: DatasetMeta,
    /// Player groups for explanations: feature name and column indices.
    pub feature_groups: Vec<(String, Vec<usize>)>,
}

/// Hash of the split files' data lines, ignoring stamp comments.
pub fn dataset_hash(layout: &Layout) -> Result<String, CliError> {
    let mut all = Vec::new();
    for tag in SPLITS {
        let path = layout.split(tag);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| CliError::missing(format!("no dataset file {}", path.display()), "simulate"))?;
        all.extend_from_slice(tag.as_str().as_bytes());
        all.push(0);
        for line in text.lines().filter(|l| !l.starts_with('#')) {
            all.extend_from_slice(line.as_bytes());
            all.push(b'\n');
        }
    }
    Ok(sha256_hex(&all))
}

pub struct LoadedData {
    pub splits: Splits,
    pub record: DatasetRecord,
}

/// Reads the simulated splits and checks them against their record.
pub fn load_data(layout: &Layout) -> Result<LoadedData, CliError> {
    let record_path = layout.dataset_record();
    if !record_path.exists() {
        return Err(CliError::missing(
            format!("no dataset record at {}", record_path.display()),
            "simulate",
        ));
    }
    let record: DatasetRecord = read_json(&record_path)?;
    let hash = dataset_hash(layout)?;
    if hash != record.dataset_hash {
        return Err(CliError::missing(
            format!("dataset files under {} changed after they were written", record_path.parent().unwrap().display()),
            "simulate",
        ));
    }
    let seed = record.meta.seed;
    let read = |tag| Dataset::read_csv(layout.split(tag), tag, seed).map_err(CliError::from);
    let splits = Splits {
        train: read(SplitTag::Train)?,
        val: read(SplitTag::Val)?,
        test: read(SplitTag::Test)?,
    };
    Ok(LoadedData { splits, record })
}

/// A fitted model with the provenance needed to reuse it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bundle {
    pub config_hash: String,
    pub seed: u64,
    pub dataset_hash: String,
    pub model: FittedModel,
}

/// Loads the bundle for `kind`, insisting it was fitted on `dataset_hash`.
pub fn load_bundle(path: &Path, kind: ModelKind, dataset_hash: &str) -> Result<Bundle, CliError> {
    if !path.exists() {
        return Err(CliError::missing(
            format!("no fitted {kind} bundle at {}", path.display()),
            "fit",
        ));
    }
    let bundle: Bundle = read_json(path)?;
    if bundle.model.kind() != kind {
        return Err(CliError::Config(format!(
            "{} holds a {} model, expected {kind}",
            path.display(),
            bundle.model.kind()
        )));
    }
    if bundle.dataset_hash != dataset_hash {
        return Err(CliError::missing(
            format!(
                "{} was fitted on dataset {} but the current dataset is {}",
                path.display(),
                short(&bundle.dataset_hash),
                short(dataset_hash)
            ),
            "fit",
        ));
    }
    Ok(bundle)
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
