//! Experiment configuration: TOML schema, defaults, validation, and
//! environment-variable overrides.
//!
//! The file is a TOML document with sections `[radio]`, `[counts]`,
//! `[budget]`, `[profiles]`, `[train]` (with `[train.model]` and
//! `[train.cluster]`), `[data]`, and `[run]`. Every key has a default, and
//! unknown keys are rejected. Environment variables of the form
//! `EDGEDEM_<SECTION>_<KEY>` override file values, e.g.
//! `EDGEDEM_RUN_SEED=7` or `EDGEDEM_COUNTS_N_UES=20`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::demlearn::{Linkage, ModelKind, Regularizer, TrainConfig};
use crate::radio::RadioConfig;
use crate::scenario::{BudgetDraw, ProfileDraw};

/// Prefix of override environment variables.
pub const ENV_PREFIX: &str = "EDGEDEM_";

/// Which association scheme the round loop runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingScheme {
    /// Swap matching from the signal-power start, min-max allocation.
    Proposal,
    /// Distance-weighted random association, min-max allocation.
    Random,
    /// Signal-power association with equal bandwidth split per cell.
    Uniform,
    /// One-shot deferred acceptance, min-max allocation.
    OneSided,
    /// Exhaustive search over assignments, min-max allocation.
    Optimal,
}

/// Which learning scheme the round loop runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningScheme {
    /// Personalized training with hierarchical averaging and regrouping.
    Demlearn,
    /// Flat federated averaging; clients restart from the global model.
    Fedavg,
}

/// Where the dataset comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
}

/// Population sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountsConfig {
    /// Number of UEs.
    pub n_ues: usize,
    /// Number of SBSs.
    pub n_sbs: usize,
    /// Number of logical learning groups.
    pub n_groups: usize,
}

impl Default for CountsConfig {
    fn default() -> Self {
        CountsConfig {
            n_ues: 50,
            n_sbs: 5,
            n_groups: 3,
        }
    }
}

/// Classifier architecture name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelArch {
    Logistic,
    Mlp,
}

/// Classifier architecture and initialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelArch,
    /// Hidden width; used only by the mlp architecture.
    pub hidden: usize,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelArch::Logistic,
            hidden: 32,
            init_sigma: 0.01,
        }
    }
}

impl ModelConfig {
    /// The layout-level architecture descriptor.
    pub fn model_kind(&self) -> ModelKind {
        match self.kind {
            ModelArch::Logistic => ModelKind::Logistic,
            ModelArch::Mlp => ModelKind::Mlp {
                hidden: self.hidden,
            },
        }
    }
}

/// What vectors regrouping clusters on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterFeatures {
    /// Flattened personal weights.
    Weights,
    /// Weights concatenated with the local-loss gradient.
    WeightsGrads,
}

/// Regrouping parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub linkage: Linkage,
    pub features: ClusterFeatures,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            linkage: Linkage::Average,
            features: ClusterFeatures::Weights,
        }
    }
}

/// Training hyperparameters plus model and regrouping settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub eta: f64,
    pub reg: Regularizer,
    pub reg_weight: f64,
    pub tau: u64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub rounds: u64,
    pub model: ModelConfig,
    pub cluster: ClusterConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            eta: t.eta,
            reg: t.reg,
            reg_weight: t.reg_weight,
            tau: t.tau,
            local_epochs: t.local_epochs,
            batch_size: t.batch_size,
            rounds: t.rounds,
            model: ModelConfig::default(),
            cluster: ClusterConfig::default(),
        }
    }
}

impl TrainSection {
    /// The plain hyperparameter view used by the training functions.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            eta: self.eta,
            reg: self.reg,
            reg_weight: self.reg_weight,
            tau: self.tau,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            rounds: self.rounds,
        }
    }
}

/// Dataset source and partition parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Synthetic generator: class count.
    pub n_classes: usize,
    /// Synthetic generator: feature dimension.
    pub input_dim: usize,
    /// Synthetic generator: global pool size.
    pub n_samples: usize,
    /// Synthetic generator: per-coordinate noise around class means.
    pub spread: f64,
    /// IDX source: image archive path.
    pub images_path: String,
    /// IDX source: label archive path.
    pub labels_path: String,
    /// Distinct labels per UE shard.
    pub labels_per_ue: usize,
    /// Smallest shard size.
    pub samples_per_ue_min: u64,
    /// Largest shard size.
    pub samples_per_ue_max: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            n_classes: 10,
            input_dim: 10,
            n_samples: 30_000,
            spread: crate::datagen::DEFAULT_SPREAD,
            images_path: String::new(),
            labels_path: String::new(),
            labels_per_ue: 2,
            samples_per_ue_min: 100,
            samples_per_ue_max: 400,
        }
    }
}

/// Execution settings: schemes, replications, seeding, and outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub matching_scheme: MatchingScheme,
    pub learning_scheme: LearningScheme,
    /// Independent repetitions; replication `r` seeds from `seed + r`.
    pub replications: usize,
    pub seed: u64,
    pub out_dir: String,
    /// Record every applied swap in the trace file.
    pub trace_matching: bool,
    /// Worker threads for replications; 0 uses all cores.
    pub workers: usize,
    /// Reserved fallback uplink rate in bit/s; 0 derives it from the
    /// median link quality.
    pub edge_rate_bps: f64,
    /// Member cap per SBS; 0 means uncapped.
    pub quota_per_sbs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            matching_scheme: MatchingScheme::Proposal,
            learning_scheme: LearningScheme::Demlearn,
            replications: 10,
            seed: 1,
            out_dir: "out".into(),
            trace_matching: false,
            workers: 0,
            edge_rate_bps: 0.0,
            quota_per_sbs: 0,
        }
    }
}

/// The full experiment description.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub radio: RadioConfig,
    pub counts: CountsConfig,
    pub budget: BudgetDraw,
    pub profiles: ProfileDraw,
    pub train: TrainSection,
    pub data: DataConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// Quota vector implied by the config: the explicit cap, or the UE
    /// count when uncapped.
    pub fn quotas(&self) -> Vec<usize> {
        let q = if self.run.quota_per_sbs == 0 {
            self.counts.n_ues
        } else {
            self.run.quota_per_sbs
        };
        vec![q; self.counts.n_sbs]
    }

    /// Radio config with the subband shares filled for the SBS count.
    pub fn radio_for_counts(&self) -> RadioConfig {
        if self.radio.subbands_per_sbs.is_empty() {
            self.radio.clone().with_even_subbands(self.counts.n_sbs)
        } else {
            self.radio.clone()
        }
    }

    /// Checks cross-field invariants.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let c = &self.counts;
        if c.n_ues == 0 || c.n_sbs == 0 {
            return Err(ExperimentError::Config(
                "counts.n_ues and counts.n_sbs must be positive".into(),
            ));
        }
        if c.n_groups == 0 || c.n_groups > c.n_ues {
            return Err(ExperimentError::Config(
                "counts.n_groups must be in [1, n_ues]".into(),
            ));
        }
        if !self.radio.subbands_per_sbs.is_empty()
            && self.radio.subbands_per_sbs.len() != c.n_sbs
        {
            return Err(ExperimentError::Config(format!(
                "radio.subbands_per_sbs has {} entries for {} SBSs",
                self.radio.subbands_per_sbs.len(),
                c.n_sbs
            )));
        }
        self.radio_for_counts().validate()?;
        let t = &self.train;
        if !(t.learning_rate >= 0.0) || !(t.eta >= 0.0) || !(t.reg_weight >= 0.0) {
            return Err(ExperimentError::Config(
                "train rates and weights must be nonnegative".into(),
            ));
        }
        if t.tau == 0 || t.rounds == 0 || t.batch_size == 0 {
            return Err(ExperimentError::Config(
                "train.tau, train.rounds, and train.batch_size must be positive".into(),
            ));
        }
        if !(t.model.init_sigma >= 0.0) {
            return Err(ExperimentError::Config(
                "train.model.init_sigma must be nonnegative".into(),
            ));
        }
        if t.model.kind == ModelArch::Mlp && t.model.hidden == 0 {
            return Err(ExperimentError::Config(
                "train.model.hidden must be positive for the mlp architecture".into(),
            ));
        }
        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                if d.n_classes < 2 || d.input_dim < d.n_classes || d.n_samples == 0 {
                    return Err(ExperimentError::Config(
                        "data: need n_classes >= 2, input_dim >= n_classes, n_samples > 0"
                            .into(),
                    ));
                }
            }
            DataSource::Idx => {
                if d.images_path.is_empty() || d.labels_path.is_empty() {
                    return Err(ExperimentError::Config(
                        "data: idx source needs images_path and labels_path".into(),
                    ));
                }
            }
        }
        if d.labels_per_ue == 0 || d.labels_per_ue > d.n_classes {
            return Err(ExperimentError::Config(
                "data.labels_per_ue must be in [1, n_classes]".into(),
            ));
        }
        if d.samples_per_ue_min == 0 || d.samples_per_ue_min > d.samples_per_ue_max {
            return Err(ExperimentError::Config(
                "data.samples_per_ue_min..max must be a positive ascending range".into(),
            ));
        }
        if self.run.replications == 0 {
            return Err(ExperimentError::Config(
                "run.replications must be positive".into(),
            ));
        }
        if self.run.out_dir.is_empty() {
            return Err(ExperimentError::Config("run.out_dir must be set".into()));
        }
        Ok(())
    }
}

/// Parses a TOML document and applies the given environment overrides.
pub fn parse_config(
    text: &str,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<ExperimentConfig, ExperimentError> {
    let mut value: toml::Value =
        toml::from_str(text).map_err(|e| ExperimentError::Parse(e.to_string()))?;
    apply_env_overrides(&mut value, env)?;
    let cfg: ExperimentConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| ExperimentError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a config file and applies overrides from the process environment.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, std::env::vars())
}

/// Applies `EDGEDEM_<SECTION>_<KEY>` overrides onto a parsed TOML tree.
/// Values parse as TOML scalars or arrays when possible and fall back to
/// strings; integers coerce to floats where the schema expects a float.
pub fn apply_env_overrides(
    value: &mut toml::Value,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<(), ExperimentError> {
    let reference = toml::Value::try_from(ExperimentConfig::default())
        .map_err(|e| ExperimentError::Parse(e.to_string()))?;
    let mut overrides: Vec<(String, String, String)> = Vec::new();
    for (name, raw) in env {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let Some((section, key)) = rest.split_once('_') else {
            return Err(ExperimentError::Config(format!(
                "malformed override {name}: expected {ENV_PREFIX}<SECTION>_<KEY>"
            )));
        };
        overrides.push((section.to_lowercase(), key.to_lowercase(), raw));
    }
    // Deterministic application order regardless of environment ordering.
    overrides.sort();

    for (section, key, raw) in overrides {
        let expected = reference
            .get(&section)
            .and_then(|s| s.get(&key))
            .ok_or_else(|| {
                ExperimentError::Config(format!(
                    "unknown configuration key {section}.{key} in environment override"
                ))
            })?;
        let mut parsed = toml::from_str::<toml::Value>(&format!("v = {raw}"))
            .ok()
            .and_then(|v| v.get("v").cloned())
            .unwrap_or_else(|| toml::Value::String(raw.clone()));
        if let (toml::Value::Integer(i), toml::Value::Float(_)) = (&parsed, expected) {
            parsed = toml::Value::Float(*i as f64);
        }
        if expected.is_str() && !parsed.is_str() {
            parsed = toml::Value::String(raw.clone());
        }
        let root = value
            .as_table_mut()
            .ok_or_else(|| ExperimentError::Parse("config root is not a table".into()))?;
        let section_table = root
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| {
                ExperimentError::Parse(format!("config section {section} is not a table"))
            })?;
        section_table.insert(key, parsed);
    }
    Ok(())
}
