//! Experiment orchestration: configuration, the round loop, metrics,
//! file outputs, and the N-by-S delay sweep.

mod config;
mod emit;
mod records;
mod runner;
mod sweep;

pub use config::{
    apply_env_overrides, load_config, parse_config, ClusterConfig, ClusterFeatures,
    CountsConfig, DataConfig, DataSource, ExperimentConfig, LearningScheme, MatchingScheme,
    ModelArch, ModelConfig, RunConfig, TrainSection, ENV_PREFIX,
};
pub use emit::{emit_results, write_csv, write_jsonl, write_summary, EmitPaths, CSV_HEADER};
pub use records::{mean, std_dev, MetricsReport, RoundRecord, RunOutput, Summary, TraceEvent};
pub use runner::{evaluate_models, matching_bench, run_experiment, seeds, BenchRecord};
pub use sweep::{sweep, write_sweep, SweepCell, SweepResult, SWEEP_CSV_HEADER};

use thiserror::Error;

/// Errors from experiment orchestration.
#[derive(Debug, Error)]
pub enum ExperimentError {
    /// The configuration is structurally invalid.
    #[error("configuration error: {0}")]
    Config(String),
    /// TOML parsing or re-serialization failed.
    #[error("configuration parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Radio(#[from] crate::radio::RadioError),
    #[error(transparent)]
    Latency(#[from] crate::latency::LatencyError),
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error(transparent)]
    Match(#[from] crate::matching::MatchError),
    #[error(transparent)]
    Learn(#[from] crate::demlearn::LearnError),
    #[error(transparent)]
    Data(#[from] crate::datagen::DataError),
    /// A replication failed; the index identifies which one.
    #[error("replication {index} failed: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<ExperimentError>,
    },
}
