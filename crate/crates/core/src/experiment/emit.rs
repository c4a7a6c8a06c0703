//! Writers for the run outputs: the per-round results table, the trace
//! stream, and the summary document.

use std::fs;
use std::path::{Path, PathBuf};

use super::records::{RoundRecord, RunOutput, Summary, TraceEvent};
use super::ExperimentError;

/// Column names of the results table, in order. The per-cell column is
/// semicolon-joined.
pub const CSV_HEADER: &str = "replication,round,system_delay_ms,cumulative_delay_ms,total_delay_ms,swap_count,specialization,generalization,regional_accuracy,mean_pairwise_distance,per_sbs_delay_ms";

/// Locations of the three output files of a run.
#[derive(Debug, Clone)]
pub struct EmitPaths {
    pub records_csv: PathBuf,
    pub trace_jsonl: PathBuf,
    pub summary_json: PathBuf,
}

impl EmitPaths {
    /// Standard file names under one output directory.
    pub fn new(out_dir: &Path) -> EmitPaths {
        EmitPaths {
            records_csv: out_dir.join("records.csv"),
            trace_jsonl: out_dir.join("trace.jsonl"),
            summary_json: out_dir.join("summary.json"),
        }
    }
}

/// Writes the per-round table as CSV with the standard header.
pub fn write_csv(path: &Path, records: &[RoundRecord]) -> Result<(), ExperimentError> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(CSV_HEADER.split(','))?;
    for r in records {
        wtr.write_record(r.to_csv_row().split(','))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes the trace as one JSON document per line.
pub fn write_jsonl(path: &Path, trace: &[TraceEvent]) -> Result<(), ExperimentError> {
    let mut text = String::new();
    for ev in trace {
        text.push_str(
            &serde_json::to_string(ev).map_err(|e| ExperimentError::Parse(e.to_string()))?,
        );
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Writes the cross-replication summary as pretty JSON.
pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(summary)
        .map_err(|e| ExperimentError::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Creates the output directory and writes all three files.
pub fn emit_results(out_dir: &Path, out: &RunOutput) -> Result<EmitPaths, ExperimentError> {
    fs::create_dir_all(out_dir)?;
    let paths = EmitPaths::new(out_dir);
    write_csv(&paths.records_csv, &out.records)?;
    write_jsonl(&paths.trace_jsonl, &out.trace)?;
    write_summary(&paths.summary_json, &out.summary)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_output() -> RunOutput {
        let records = vec![RoundRecord {
            replication: 0,
            round: 0,
            system_delay_ms: 12.5,
            cumulative_delay_ms: 12.5,
            total_delay_ms: 40.0,
            swap_count: 2,
            specialization: 0.875,
            generalization: 0.5,
            regional_accuracy: 0.25,
            mean_pairwise_distance: 0.125,
            per_sbs_delay_ms: vec![12.5, 6.25],
        }];
        let summary = Summary::from_records(&records);
        let trace = vec![TraceEvent::Round {
            record: records[0].clone(),
            groups: vec![vec![0]],
            merges: vec![],
        }];
        RunOutput {
            records,
            trace,
            summary,
        }
    }

    #[test]
    fn test_emit_writes_all_three_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = sample_output();
        let paths = emit_results(dir.path(), &out).unwrap();
        let csv_text = fs::read_to_string(&paths.records_csv).unwrap();
        let mut lines = csv_text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "0,0,12.5,12.5,40,2,0.875,0.5,0.25,0.125,12.5;6.25"
        );
        let jsonl = fs::read_to_string(&paths.trace_jsonl).unwrap();
        assert_eq!(jsonl.lines().count(), 1);
        let back: TraceEvent = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
        assert!(matches!(back, TraceEvent::Round { .. }));
        let summary: Summary =
            serde_json::from_str(&fs::read_to_string(&paths.summary_json).unwrap()).unwrap();
        assert_eq!(summary.replications, 1);
    }

    #[test]
    fn test_emit_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let out = sample_output();
        let a_dir = dir.path().join("a");
        let b_dir = dir.path().join("b");
        let a = emit_results(&a_dir, &out).unwrap();
        let b = emit_results(&b_dir, &out).unwrap();
        assert_eq!(
            fs::read(&a.records_csv).unwrap(),
            fs::read(&b.records_csv).unwrap()
        );
        assert_eq!(
            fs::read(&a.trace_jsonl).unwrap(),
            fs::read(&b.trace_jsonl).unwrap()
        );
        assert_eq!(
            fs::read(&a.summary_json).unwrap(),
            fs::read(&b.summary_json).unwrap()
        );
    }
}
