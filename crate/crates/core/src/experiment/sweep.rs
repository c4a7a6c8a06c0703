//! Delay sweep over a grid of UE and SBS counts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::records::mean;
use super::runner::run_experiment;
use super::ExperimentError;

/// Header of the sweep table.
pub const SWEEP_CSV_HEADER: &str = "n_ues,n_sbs,system_delay_ms_mean,total_delay_ms_mean";

/// Mean one-round delays for one grid point, averaged over rounds and
/// replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub n_ues: usize,
    pub n_sbs: usize,
    /// Mean slowest-cell delay per round, milliseconds.
    pub system_delay_ms_mean: f64,
    /// Mean summed per-UE delay per round, milliseconds.
    pub total_delay_ms_mean: f64,
}

/// The labeled grid of sweep cells, row-major with UE counts as rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub ue_counts: Vec<usize>,
    pub sbs_counts: Vec<usize>,
    pub replications: usize,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    /// The cell for a given grid point, if it exists.
    pub fn cell(&self, n_ues: usize, n_sbs: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.n_ues == n_ues && c.n_sbs == n_sbs)
    }

    /// Formats the grid as CSV, one row per cell in row-major order.
    pub fn to_csv(&self) -> String {
        let mut text = String::from(SWEEP_CSV_HEADER);
        text.push('\n');
        for c in &self.cells {
            text.push_str(&format!(
                "{},{},{},{}\n",
                c.n_ues, c.n_sbs, c.system_delay_ms_mean, c.total_delay_ms_mean
            ));
        }
        text
    }
}

/// Runs the configured experiment at every (UE count, SBS count) grid
/// point and averages the per-round delays. Each cell runs one round
/// with the learning phase idle, since the association delays do not
/// depend on training; subband shares refill per cell and the group
/// count clamps to the UE count.
pub fn sweep(
    cfg: &ExperimentConfig,
    ue_counts: &[usize],
    sbs_counts: &[usize],
) -> Result<SweepResult, ExperimentError> {
    let mut cells = Vec::with_capacity(ue_counts.len() * sbs_counts.len());
    for &n in ue_counts {
        for &s in sbs_counts {
            let mut cell_cfg = cfg.clone();
            cell_cfg.counts.n_ues = n;
            cell_cfg.counts.n_sbs = s;
            cell_cfg.counts.n_groups = cfg.counts.n_groups.min(n);
            cell_cfg.radio.subbands_per_sbs = Vec::new();
            cell_cfg.train.rounds = 1;
            cell_cfg.train.tau = 2;
            let out = run_experiment(&cell_cfg)?;
            let totals: Vec<f64> = out.records.iter().map(|r| r.total_delay_ms).collect();
            cells.push(SweepCell {
                n_ues: n,
                n_sbs: s,
                system_delay_ms_mean: out.summary.system_delay_ms_mean,
                total_delay_ms_mean: mean(&totals),
            });
        }
    }
    Ok(SweepResult {
        ue_counts: ue_counts.to_vec(),
        sbs_counts: sbs_counts.to_vec(),
        replications: cfg.run.replications,
        cells,
    })
}

/// Writes the sweep grid as CSV and JSON under the output directory.
pub fn write_sweep(out_dir: &Path, result: &SweepResult) -> Result<(PathBuf, PathBuf), ExperimentError> {
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("sweep.csv");
    let json_path = out_dir.join("sweep.json");
    std::fs::write(&csv_path, result.to_csv())?;
    let mut text = serde_json::to_string_pretty(result)
        .map_err(|e| ExperimentError::Parse(e.to_string()))?;
    text.push('\n');
    std::fs::write(&json_path, text)?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.counts.n_groups = 2;
        cfg.data.n_classes = 3;
        cfg.data.input_dim = 4;
        cfg.data.n_samples = 3_000;
        cfg.data.samples_per_ue_min = 30;
        cfg.data.samples_per_ue_max = 60;
        cfg.run.replications = 2;
        cfg.run.seed = 5;
        cfg
    }

    #[test]
    fn test_single_cell_matches_run_experiment() {
        let cfg = small_cfg();
        let grid = sweep(&cfg, &[5], &[2]).unwrap();
        assert_eq!(grid.cells.len(), 1);

        let mut direct = cfg.clone();
        direct.counts.n_ues = 5;
        direct.counts.n_sbs = 2;
        direct.train.rounds = 1;
        direct.train.tau = 2;
        let out = run_experiment(&direct).unwrap();
        let cell = grid.cell(5, 2).unwrap();
        assert_eq!(cell.system_delay_ms_mean, out.summary.system_delay_ms_mean);
    }

    #[test]
    fn test_grid_is_row_major_and_deterministic() {
        let cfg = small_cfg();
        let grid = sweep(&cfg, &[4, 6], &[2, 3]).unwrap();
        let order: Vec<(usize, usize)> =
            grid.cells.iter().map(|c| (c.n_ues, c.n_sbs)).collect();
        assert_eq!(order, vec![(4, 2), (4, 3), (6, 2), (6, 3)]);
        let again = sweep(&cfg, &[4, 6], &[2, 3]).unwrap();
        assert_eq!(
            serde_json::to_string(&grid).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
        let csv = grid.to_csv();
        assert!(csv.starts_with(SWEEP_CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
    }
}
