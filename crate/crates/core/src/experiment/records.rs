//! Output record types: per-round rows, trace events, and the
//! cross-replication summary.

use serde::{Deserialize, Serialize};

use crate::demlearn::MergeStep;
use crate::matching::SwapLogEntry;

/// One row of the per-round results table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Replication index, 0-based.
    pub replication: usize,
    /// Global round, 0-based.
    pub round: u64,
    /// Slowest-cell delay for this round in milliseconds.
    pub system_delay_ms: f64,
    /// Running sum of `system_delay_ms` within the replication.
    pub cumulative_delay_ms: f64,
    /// Sum of per-UE completion times for this round in milliseconds.
    pub total_delay_ms: f64,
    /// Swaps applied by the association phase during this round.
    pub swap_count: u64,
    /// Mean accuracy of personal models on their own test shards.
    pub specialization: f64,
    /// Mean accuracy of personal models on the shared test pool.
    pub generalization: f64,
    /// Accuracy of the top-level model on the shared test pool.
    pub regional_accuracy: f64,
    /// Mean pairwise Euclidean distance between personal models.
    pub mean_pairwise_distance: f64,
    /// Per-cell round delays in milliseconds, SBS-major.
    pub per_sbs_delay_ms: Vec<f64>,
}

impl RoundRecord {
    /// Formats the row for the results CSV; the per-cell column is
    /// semicolon-joined.
    pub fn to_csv_row(&self) -> String {
        let per_sbs = self
            .per_sbs_delay_ms
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.replication,
            self.round,
            self.system_delay_ms,
            self.cumulative_delay_ms,
            self.total_delay_ms,
            self.swap_count,
            self.specialization,
            self.generalization,
            self.regional_accuracy,
            self.mean_pairwise_distance,
            per_sbs
        )
    }
}

/// Per-UE evaluation of a model population at one point in time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Personal-model accuracy on the UE's own test shard.
    pub specialization: Vec<f64>,
    /// Personal-model accuracy on the shared test pool.
    pub generalization: Vec<f64>,
    /// Top-level model accuracy on the shared test pool.
    pub regional_accuracy: f64,
    /// Mean pairwise Euclidean distance between personal models.
    pub mean_pairwise_distance: f64,
}

impl MetricsReport {
    pub fn specialization_mean(&self) -> f64 {
        mean(&self.specialization)
    }

    pub fn generalization_mean(&self) -> f64 {
        mean(&self.generalization)
    }
}

/// One line of the trace file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    /// Association formed for a replication.
    Matching {
        replication: usize,
        swaps_applied: usize,
        proposals_evaluated: usize,
        initial_system_delay_s: f64,
        final_system_delay_s: f64,
        initial_total_delay_s: f64,
        final_total_delay_s: f64,
        serving: Vec<i64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        swap_log: Vec<SwapLogEntry>,
    },
    /// One global round finished.
    Round {
        record: RoundRecord,
        groups: Vec<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        merges: Vec<MergeStep>,
    },
}

/// Cross-replication aggregate written to the summary file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub replications: usize,
    pub rounds: u64,
    /// Mean over all rounds and replications of the system round delay.
    pub system_delay_ms_mean: f64,
    /// Mean over replications of the final cumulative delay.
    pub final_cumulative_delay_ms_mean: f64,
    /// Mean over replications of total swaps applied across rounds.
    pub swap_count_mean: f64,
    /// Final-round specialization, mean and standard deviation over
    /// replications.
    pub specialization_mean: f64,
    pub specialization_std: f64,
    /// Final-round generalization, mean and standard deviation over
    /// replications.
    pub generalization_mean: f64,
    pub generalization_std: f64,
    /// Final-round top-level accuracy, mean and standard deviation over
    /// replications.
    pub regional_accuracy_mean: f64,
    pub regional_accuracy_std: f64,
    /// Final-round mean pairwise model distance, averaged over
    /// replications.
    pub mean_pairwise_distance_mean: f64,
}

impl Summary {
    /// Aggregates the per-round rows of a finished run.
    pub fn from_records(records: &[RoundRecord]) -> Summary {
        let replications = records
            .iter()
            .map(|r| r.replication + 1)
            .max()
            .unwrap_or(0);
        let rounds = records.iter().map(|r| r.round + 1).max().unwrap_or(0);
        let finals: Vec<&RoundRecord> = records
            .iter()
            .filter(|r| r.round + 1 == rounds)
            .collect();
        let collect = |f: &dyn Fn(&RoundRecord) -> f64| -> Vec<f64> {
            finals.iter().map(|r| f(r)).collect()
        };
        let spec = collect(&|r| r.specialization);
        let gen = collect(&|r| r.generalization);
        let reg = collect(&|r| r.regional_accuracy);
        let mut swaps_per_rep = vec![0.0; replications];
        for r in records {
            swaps_per_rep[r.replication] += r.swap_count as f64;
        }
        Summary {
            replications,
            rounds,
            system_delay_ms_mean: mean(
                &records.iter().map(|r| r.system_delay_ms).collect::<Vec<_>>(),
            ),
            final_cumulative_delay_ms_mean: mean(&collect(&|r| r.cumulative_delay_ms)),
            swap_count_mean: mean(&swaps_per_rep),
            specialization_mean: mean(&spec),
            specialization_std: std_dev(&spec),
            generalization_mean: mean(&gen),
            generalization_std: std_dev(&gen),
            regional_accuracy_mean: mean(&reg),
            regional_accuracy_std: std_dev(&reg),
            mean_pairwise_distance_mean: mean(&collect(&|r| r.mean_pairwise_distance)),
        }
    }
}

/// Everything a run produces, before it is written to disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub trace: Vec<TraceEvent>,
    pub summary: Summary,
}

/// Arithmetic mean; 0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}
