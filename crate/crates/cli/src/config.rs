//! Experiment configuration: parsing, preset resolution and hashing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use drn_core::datagen::{MAIN_SIZES, REG_RESPONSE_SHIFT, REG_SIZE};
use drn_core::explain::{Target, DEFAULT_BACKGROUND, DEFAULT_COALITION_SAMPLES};
use drn_core::metrics::DEFAULT_QL_LEVEL;
use drn_core::models::ModelKind;
use drn_core::partition::PartitionConfig;
use drn_core::train::TrainingConfig;
use drn_core::baselines::{Positive, MDN_COMPONENTS};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Gamma plus lognormal responses on two correlated features.
    Synthetic(SyntheticSource),
    /// Heteroscedastic normal responses, shifted to be positive.
    Regularization(RegularizationSource),
    /// A user-supplied table with a preprocessing recipe.
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub seed: Option<u64>,
    #[serde(default = "main_train")]
    pub n_train: usize,
    #[serde(default = "main_val")]
    pub n_val: usize,
    #[serde(default = "main_test")]
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationSource {
    pub seed: Option<u64>,
    #[serde(default = "reg_size")]
    pub n: usize,
    #[serde(default = "reg_shift")]
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub seed: Option<u64>,
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    pub recipe: PathBuf,
}

fn main_train() -> usize {
    MAIN_SIZES.0
}
fn main_val() -> usize {
    MAIN_SIZES.1
}
fn main_test() -> usize {
    MAIN_SIZES.2
}
fn reg_size() -> usize {
    REG_SIZE
}
fn reg_shift() -> f64 {
    REG_RESPONSE_SHIFT
}

impl DataSource {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::Synthetic(s) => s.seed,
            Self::Regularization(s) => s.seed,
            Self::Csv(s) => s.seed,
        }
    }

    fn set_seed(&mut self, seed: u64) {
        match self {
            Self::Synthetic(s) => s.seed = Some(seed),
            Self::Regularization(s) => s.seed = Some(seed),
            Self::Csv(s) => s.seed = Some(seed),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Synthetic(_) => "synthetic_main",
            Self::Regularization(_) => "synthetic_regularization",
            Self::Csv(_) => "csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Nll,
    Crps,
    Rmse,
    Ql,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Self::Nll, Self::Crps, Self::Rmse, Self::Ql];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nll => "nll",
            Self::Crps => "crps",
            Self::Rmse => "rmse",
            Self::Ql => "ql",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdnSettings {
    #[serde(default = "mdn_components")]
    pub components: usize,
    #[serde(default)]
    pub positive: Positive,
}

fn mdn_components() -> usize {
    MDN_COMPONENTS
}

impl Default for MdnSettings {
    fn default() -> Self {
        Self {
            components: MDN_COMPONENTS,
            positive: Positive::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSettings {
    #[serde(default = "ql_level")]
    pub quantile_level: f64,
    /// Model the Wilcoxon tests compare against; skipped when not evaluated.
    #[serde(default = "reference")]
    pub reference: ModelKind,
    /// Test rows whose predictive densities are written out.
    #[serde(default = "density_instances")]
    pub density_instances: Vec<usize>,
    #[serde(default = "density_points")]
    pub density_points: usize,
}

fn ql_level() -> f64 {
    DEFAULT_QL_LEVEL
}
fn reference() -> ModelKind {
    ModelKind::Glm
}
fn density_instances() -> Vec<usize> {
    vec![0, 1, 2]
}
fn density_points() -> usize {
    512
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            quantile_level: ql_level(),
            reference: reference(),
            density_instances: density_instances(),
            density_points: density_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    pub model: ModelKind,
    pub target: Target,
    /// Explain the change from the GLM's value rather than the model's value.
    #[serde(default)]
    pub adjustment: bool,
    /// Test rows to explain.
    #[serde(default = "explain_instances")]
    pub instances: Vec<usize>,
    /// Background rows drawn from the training split.
    #[serde(default = "background")]
    pub background: usize,
    pub seed: Option<u64>,
    #[serde(default = "coalition_samples")]
    pub coalition_samples: usize,
    /// Treat each one-hot block as a single player.
    #[serde(default = "yes")]
    pub group_categorical: bool,
    /// Player whose value colours the dependence scatter.
    #[serde(default)]
    pub dependence_color: Option<String>,
}

fn explain_instances() -> Vec<usize> {
    (0..20).collect()
}
fn background() -> usize {
    DEFAULT_BACKGROUND
}
fn coalition_samples() -> usize {
    DEFAULT_COALITION_SAMPLES
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSettings {
    #[serde(default = "search_model")]
    pub model: ModelKind,
    #[serde(default = "budget")]
    pub budget: usize,
    pub seed: Option<u64>,
    /// Caps every trial's epochs, for quick searches.
    #[serde(default)]
    pub max_epochs: Option<usize>,
}

fn search_model() -> ModelKind {
    ModelKind::Drn
}
fn budget() -> usize {
    20
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            model: search_model(),
            budget: budget(),
            seed: None,
            max_epochs: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartitionOverrides {
    drn: Option<PartitionConfig>,
    ddr: Option<PartitionConfig>,
}

/// The file as written.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    data: DataSource,
    #[serde(default = "all_models")]
    models: Vec<ModelKind>,
    /// Partial training settings, merged over the per-model presets.
    #[serde(default)]
    training: BTreeMap<ModelKind, Map<String, Value>>,
    #[serde(default)]
    partition: PartitionOverrides,
    #[serde(default)]
    mdn: MdnSettings,
    #[serde(default = "all_metrics")]
    metrics: Vec<Metric>,
    #[serde(default)]
    evaluation: EvaluationSettings,
    #[serde(default)]
    explain: Vec<ExplainRequest>,
    #[serde(default)]
    random_search: SearchSettings,
    #[serde(default)]
    glm_bundle: Option<PathBuf>,
    #[serde(default)]
    output: Option<PathBuf>,
}

fn all_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}
fn all_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

/// Fully resolved settings. Everything except the output directory feeds
/// the config hash.
#[derive(Debug, Clone, Serialize)]
pub struct Config {
    pub seed: u64,
    pub data: DataSource,
    pub models: Vec<ModelKind>,
    pub training: BTreeMap<ModelKind, TrainingConfig>,
    pub partition: BTreeMap<ModelKind, PartitionConfig>,
    pub mdn: MdnSettings,
    pub metrics: Vec<Metric>,
    pub evaluation: EvaluationSettings,
    pub explain: Vec<ExplainRequest>,
    pub random_search: SearchSettings,
    pub glm_bundle: Option<PathBuf>,
    #[serde(skip)]
    pub output: PathBuf,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub models: Option<Vec<ModelKind>>,
    pub output: Option<PathBuf>,
}

fn training_preset(kind: ModelKind, data: &DataSource) -> Option<TrainingConfig> {
    Some(match (kind, data) {
        (ModelKind::Glm, _) => return None,
        (ModelKind::Cann, _) => TrainingConfig::cann(),
        (ModelKind::Mdn, _) => TrainingConfig::mdn(),
        (ModelKind::Ddr, _) => TrainingConfig::ddr(),
        (ModelKind::Drn, DataSource::Csv(_)) => TrainingConfig::drn_real_data(),
        (ModelKind::Drn, DataSource::Regularization(_)) => TrainingConfig::regularization_study(),
        (ModelKind::Drn, DataSource::Synthetic(_)) => TrainingConfig::drn(),
    })
}

fn partition_preset(kind: ModelKind, data: &DataSource) -> PartitionConfig {
    match (kind, data) {
        (ModelKind::Ddr, _) => PartitionConfig::ddr(),
        (_, DataSource::Regularization(_)) => PartitionConfig::new(0.05, 5),
        _ => PartitionConfig::drn(),
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn config_error(origin: &str, err: serde_path_to_error::Error<serde_json::Error>) -> CliError {
    let path = err.path().to_string();
    let inner = err.into_inner();
    if path.is_empty() || path == "." {
        CliError::Config(format!("{origin}: {inner}"))
    } else {
        CliError::Config(format!("{origin}: field `{path}`: {inner}"))
    }
}

impl Config {
    /// Reads `path` and applies `overrides`.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, &path.display().to_string(), base_dir, overrides)
    }

    /// Parses config text; `origin` labels error messages.
    pub fn from_str(text: &str, origin: &str, base_dir: PathBuf, overrides: &Overrides) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| config_error(origin, e))?;
        Self::resolve(raw, origin, base_dir, overrides)
    }

    fn resolve(raw: RawConfig, origin: &str, base_dir: PathBuf, overrides: &Overrides) -> Result<Self, CliError> {
        let seed = overrides.seed.unwrap_or(raw.seed);
        let mut data = raw.data;
        if overrides.seed.is_some() || data.seed().is_none() {
            data.set_seed(seed);
        }
        let mut models = overrides.models.clone().unwrap_or(raw.models);
        models.sort();
        models.dedup();
        if models.is_empty() {
            return Err(CliError::Config(format!("{origin}: field `models`: no models selected")));
        }
        if let Some(k) = raw.training.keys().find(|k| **k == ModelKind::Glm) {
            return Err(CliError::Config(format!(
                "{origin}: field `training.{k}`: the GLM is fitted by IRLS and takes no training settings"
            )));
        }

        let mut training = BTreeMap::new();
        let mut partition = BTreeMap::new();
        for kind in ModelKind::ALL {
            let Some(preset) = training_preset(kind, &data) else {
                continue;
            };
            let mut value = serde_json::to_value(&preset).expect("presets serialize");
            value["seed"] = Value::from(seed);
            if let Some(patch) = raw.training.get(&kind) {
                merge(&mut value, &Value::Object(patch.clone()));
            }
            let resolved: TrainingConfig = serde_path_to_error::deserialize(value)
                .map_err(|e| config_error(origin, e))
                .map_err(|e| prefix(e, &format!("training.{kind}")))?;
            resolved
                .validate()
                .map_err(|e| CliError::Config(format!("{origin}: field `training.{kind}`: {e}")))?;
            training.insert(kind, resolved);
        }
        for kind in [ModelKind::Ddr, ModelKind::Drn] {
            let given = match kind {
                ModelKind::Ddr => raw.partition.ddr,
                _ => raw.partition.drn,
            };
            let p = given.unwrap_or_else(|| partition_preset(kind, &data));
            if !(p.proportion > 0.0 && p.proportion <= 1.0) {
                return Err(CliError::Config(format!(
                    "{origin}: field `partition.{kind}.proportion`: must lie in (0, 1]"
                )));
            }
            if !(p.lower_margin >= 0.0 && p.lower_margin < 1.0 && p.upper_margin >= 0.0) {
                return Err(CliError::Config(format!(
                    "{origin}: field `partition.{kind}`: margins must be nonnegative and the lower margin below 1"
                )));
            }
            partition.insert(kind, p);
        }

        if raw.mdn.components == 0 {
            return Err(CliError::Config(format!("{origin}: field `mdn.components`: must be positive")));
        }
        let ev = &raw.evaluation;
        if !(ev.quantile_level > 0.0 && ev.quantile_level < 1.0) {
            return Err(CliError::Config(format!(
                "{origin}: field `evaluation.quantile_level`: must lie in (0, 1)"
            )));
        }
        if ev.density_points < 2 {
            return Err(CliError::Config(format!(
                "{origin}: field `evaluation.density_points`: need at least 2 points"
            )));
        }
        for (i, req) in raw.explain.iter().enumerate() {
            if let Target::Quantile { level } = req.target {
                if !(level > 0.0 && level < 1.0) {
                    return Err(CliError::Config(format!(
                        "{origin}: field `explain[{i}].target.level`: must lie in (0, 1)"
                    )));
                }
            }
            if req.adjustment && req.model == ModelKind::Glm {
                return Err(CliError::Config(format!(
                    "{origin}: field `explain[{i}].adjustment`: the GLM has no adjustment over itself"
                )));
            }
            if req.background == 0 || req.coalition_samples == 0 {
                return Err(CliError::Config(format!(
                    "{origin}: field `explain[{i}]`: background and coalition_samples must be positive"
                )));
            }
        }
        if raw.random_search.model == ModelKind::Glm {
            return Err(CliError::Config(format!(
                "{origin}: field `random_search.model`: the GLM has no hyperparameters to search"
            )));
        }
        if raw.random_search.budget == 0 {
            return Err(CliError::Config(format!("{origin}: field `random_search.budget`: must be positive")));
        }
        let mut metrics = raw.metrics;
        metrics.sort();
        metrics.dedup();

        let output = overrides
            .output
            .clone()
            .or(raw.output.map(|p| base_dir.join(p)))
            .unwrap_or_else(|| base_dir.join("out"));
        Ok(Self {
            seed,
            data,
            models,
            training,
            partition,
            mdn: raw.mdn,
            metrics,
            evaluation: raw.evaluation,
            explain: raw.explain,
            random_search: raw.random_search,
            glm_bundle: raw.glm_bundle,
            output,
            base_dir,
        })
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn wants(&self, kind: ModelKind) -> bool {
        self.models.contains(&kind)
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed().unwrap_or(self.seed)
    }
}

fn prefix(err: CliError, at: &str) -> CliError {
    match err {
        CliError::Config(msg) if msg.contains("field `") => CliError::Config(msg.replacen("field `", &format!("field `{at}."), 1)),
        CliError::Config(msg) => CliError::Config(format!("{msg} (in `{at}`)")),
        other => other,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
