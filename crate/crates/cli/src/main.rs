//! Command-line entry point: loads a configuration, applies flag and
//! environment overrides, and dispatches to the run, sweep, benchmark,
//! or snapshot commands.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use edgedem_core::experiment::{
    emit_results, load_config, matching_bench, parse_config, run_experiment, seeds, sweep,
    write_sweep, ExperimentConfig, TraceEvent,
};

#[derive(Parser)]
#[command(
    name = "edgedem",
    version,
    about = "Simulates hierarchical federated learning over a two-tier wireless edge network"
)]
struct Cli {
    /// Experiment configuration file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override the replication count.
    #[arg(long, global = true)]
    replications: Option<usize>,
    /// Record every applied swap in the trace output.
    #[arg(long, global = true)]
    trace_matching: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment and write records.csv, trace.jsonl, summary.json.
    Run,
    /// Average round delays over a grid of UE and SBS counts.
    Sweep {
        /// Comma-separated UE counts (grid rows).
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60")]
        ues: Vec<usize>,
        /// Comma-separated SBS counts (grid columns).
        #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
        sbs: Vec<usize>,
    },
    /// Benchmark the swap matching across UE counts.
    MatchingBench {
        /// Comma-separated UE counts.
        #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60")]
        ues: Vec<usize>,
        /// Matching runs per UE count.
        #[arg(long, default_value_t = 3)]
        bench_replications: usize,
    },
    /// Run one replication and report its final group structure.
    ClusterSnapshot {
        /// Which replication of the configured run to reproduce.
        #[arg(long, default_value_t = 0)]
        replication: usize,
    },
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Prints one line to stdout, tolerating a closed pipe.
fn say(line: impl std::fmt::Display) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn load(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path)
            .with_context(|| format!("loading configuration from {}", path.display()))?,
        None => parse_config("", std::env::vars()).context("building default configuration")?,
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out_dir) = &cli.out_dir {
        cfg.run.out_dir = out_dir.display().to_string();
    }
    if let Some(replications) = cli.replications {
        cfg.run.replications = replications;
    }
    if cli.trace_matching {
        cfg.run.trace_matching = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn real_main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let cfg = load(&cli)?;
    let out_dir = PathBuf::from(&cfg.run.out_dir);

    match &cli.command {
        Command::Run => {
            let output = run_experiment(&cfg)?;
            let paths = emit_results(&out_dir, &output)?;
            say(format!("wrote {}", paths.records_csv.display()));
            say(format!("wrote {}", paths.trace_jsonl.display()));
            say(format!("wrote {}", paths.summary_json.display()));
            let s = &output.summary;
            say(format!(
                "replications={} rounds={} specialization={:.4} generalization={:.4} regional={:.4}",
                s.replications,
                s.rounds,
                s.specialization_mean,
                s.generalization_mean,
                s.regional_accuracy_mean
            ));
        }
        Command::Sweep { ues, sbs } => {
            anyhow::ensure!(
                !ues.is_empty() && !sbs.is_empty(),
                "sweep needs at least one UE count and one SBS count"
            );
            let grid = sweep(&cfg, ues, sbs)?;
            let (csv_path, json_path) = write_sweep(&out_dir, &grid)?;
            say(format!("wrote {}", csv_path.display()));
            say(format!("wrote {}", json_path.display()));
        }
        Command::MatchingBench {
            ues,
            bench_replications,
        } => {
            anyhow::ensure!(
                !ues.is_empty() && *bench_replications > 0,
                "benchmark needs UE counts and a positive replication count"
            );
            let records = matching_bench(&cfg, ues, *bench_replications)?;
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join("matching_bench.csv");
            let mut text = String::from(
                "n_ues,n_sbs,replication,swaps_applied,proposals_evaluated,scans,initial_system_delay_s,final_system_delay_s,initial_total_delay_s,final_total_delay_s,wall_time_s\n",
            );
            for r in &records {
                text.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.n_ues,
                    r.n_sbs,
                    r.replication,
                    r.swaps_applied,
                    r.proposals_evaluated,
                    r.scans,
                    r.initial_system_delay_s,
                    r.final_system_delay_s,
                    r.initial_total_delay_s,
                    r.final_total_delay_s,
                    r.wall_time_s
                ));
            }
            std::fs::write(&path, text)?;
            say(format!("wrote {}", path.display()));
            for &n in ues {
                let swaps: Vec<f64> = records
                    .iter()
                    .filter(|r| r.n_ues == n)
                    .map(|r| r.swaps_applied as f64)
                    .collect();
                let mean = swaps.iter().sum::<f64>() / swaps.len() as f64;
                say(format!("n_ues={n} mean_swaps={mean:.2}"));
            }
        }
        Command::ClusterSnapshot { replication } => {
            let mut single = cfg.clone();
            single.run.seed = seeds::replication(cfg.run.seed, *replication);
            single.run.replications = 1;
            let output = run_experiment(&single)?;
            let mut groups: Option<&Vec<Vec<usize>>> = None;
            let mut merges = None;
            for ev in &output.trace {
                if let TraceEvent::Round {
                    groups: g,
                    merges: m,
                    ..
                } = ev
                {
                    groups = Some(g);
                    if !m.is_empty() {
                        merges = Some(m);
                    }
                }
            }
            let snapshot = serde_json::json!({
                "replication": replication,
                "rounds": output.summary.rounds,
                "groups": groups,
                "merges": merges,
            });
            let text = serde_json::to_string_pretty(&snapshot)?;
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join("cluster.json");
            std::fs::write(&path, format!("{text}\n"))?;
            say(&text);
        }
    }
    Ok(())
}
