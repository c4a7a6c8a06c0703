//! The replication loop: draws a scenario, partitions data, forms the
//! association, runs training rounds, and evaluates the reporting
//! metrics; plus the association benchmark.

use rayon::prelude::*;

use super::config::{
    ClusterFeatures, DataSource, ExperimentConfig, LearningScheme, MatchingScheme,
};
use super::records::{MetricsReport, RoundRecord, RunOutput, Summary, TraceEvent};
use super::ExperimentError;
use crate::alloc::AllocSolution;
use crate::datagen::{
    build_generalization_pool, load_idx_archive, partition_noniid, synth_dataset_with_spread,
    Dataset, PartitionSpec,
};
use crate::demlearn::{
    accuracy, combine_partial_aggregates, fedavg_local_train, fedavg_round,
    hierarchical_average, local_train, partial_group_aggregate, personalized_gradient,
    recluster, recluster_vectors, GroupTree, MergeStep, ModelLayout, ModelParams,
};
use crate::matching::{
    baseline_one_sided, baseline_optimal, baseline_random, baseline_uniform_alloc,
    initial_association, round_delay_profile, run_matching, solve_allocations, Matching,
    MatchingStats,
};
use crate::radio::RadioConfig;
use crate::scenario::Scenario;

/// Seed-stream derivations. Every random concern of a replication draws
/// from its own stream, so resizing one concern never shifts another,
/// and the learning streams never depend on the matching scheme.
pub mod seeds {
    use crate::units::sub_seed;

    /// Master seed of replication `r`.
    pub fn replication(base: u64, r: usize) -> u64 {
        base.wrapping_add(r as u64)
    }

    /// Topology, channel, and compute-profile stream.
    pub fn scenario(rep_seed: u64) -> u64 {
        sub_seed(rep_seed, 1)
    }

    /// Dataset generation and partition stream.
    pub fn data(rep_seed: u64) -> u64 {
        sub_seed(rep_seed, 2)
    }

    /// Training stream; split further per round and UE.
    pub fn train(rep_seed: u64) -> u64 {
        sub_seed(rep_seed, 3)
    }

    /// Random-association stream.
    pub fn matching(rep_seed: u64) -> u64 {
        sub_seed(rep_seed, 4)
    }

    /// Weight-initialization stream.
    pub fn init(rep_seed: u64) -> u64 {
        sub_seed(rep_seed, 5)
    }

    /// Per-UE weight-initialization stream for personal models.
    pub fn init_ue(init_seed: u64, ue: usize) -> u64 {
        sub_seed(init_seed, ue as u64)
    }

    /// Mini-batch shuffling stream of one UE in one round.
    pub fn round_ue(train_seed: u64, round: u64, ue: usize) -> u64 {
        sub_seed(sub_seed(train_seed, round), ue as u64)
    }
}

/// Runs every replication of the configured experiment and aggregates
/// the outputs in replication order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let radio = cfg.radio_for_counts();
    let reps = cfg.run.replications;
    let results: Vec<Result<(Vec<RoundRecord>, Vec<TraceEvent>), ExperimentError>> =
        if cfg.run.workers == 1 || reps == 1 {
            (0..reps).map(|r| run_replication(cfg, &radio, r)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.run.workers)
                .build()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            pool.install(|| {
                (0..reps)
                    .into_par_iter()
                    .map(|r| run_replication(cfg, &radio, r))
                    .collect()
            })
        };

    let mut records = Vec::new();
    let mut trace = Vec::new();
    for (r, result) in results.into_iter().enumerate() {
        let (rep_records, rep_trace) = result.map_err(|e| ExperimentError::Replication {
            index: r,
            source: Box::new(e),
        })?;
        records.extend(rep_records);
        trace.extend(rep_trace);
    }
    let summary = Summary::from_records(&records);
    Ok(RunOutput {
        records,
        trace,
        summary,
    })
}

/// The association chosen for one replication.
struct AssociationResult {
    matching: Matching,
    allocs: Vec<Option<AllocSolution>>,
    stats: Option<MatchingStats>,
}

fn form_association(
    scn: &Scenario,
    cfg: &ExperimentConfig,
    rep_seed: u64,
) -> Result<AssociationResult, ExperimentError> {
    let quotas = cfg.quotas();
    Ok(match cfg.run.matching_scheme {
        MatchingScheme::Proposal => {
            let out = run_matching(scn, &quotas)?;
            AssociationResult {
                matching: out.matching,
                allocs: out.allocs,
                stats: Some(out.stats),
            }
        }
        MatchingScheme::Random => {
            let matching = baseline_random(scn, &quotas, seeds::matching(rep_seed));
            let allocs = solve_allocations(scn, &matching)?;
            AssociationResult {
                matching,
                allocs,
                stats: None,
            }
        }
        MatchingScheme::Uniform => {
            let matching = initial_association(scn, &quotas);
            let allocs = baseline_uniform_alloc(scn, &matching);
            AssociationResult {
                matching,
                allocs,
                stats: None,
            }
        }
        MatchingScheme::OneSided => {
            let matching = baseline_one_sided(scn, &quotas);
            let allocs = solve_allocations(scn, &matching)?;
            AssociationResult {
                matching,
                allocs,
                stats: None,
            }
        }
        MatchingScheme::Optimal => {
            let out = baseline_optimal(scn, &quotas)?;
            AssociationResult {
                matching: out.matching,
                allocs: out.allocs,
                stats: Some(out.stats),
            }
        }
    })
}

fn load_dataset(cfg: &ExperimentConfig, data_seed: u64) -> Result<Dataset, ExperimentError> {
    Ok(match cfg.data.source {
        DataSource::Synthetic => synth_dataset_with_spread(
            cfg.data.n_classes,
            cfg.data.input_dim,
            cfg.data.n_samples,
            cfg.data.spread,
            crate::units::sub_seed(data_seed, 1),
        )?,
        DataSource::Idx => load_idx_archive(
            std::path::Path::new(&cfg.data.images_path),
            std::path::Path::new(&cfg.data.labels_path),
        )?,
    })
}

/// Near-even contiguous index chunks used as the starting partition.
fn initial_groups(n_ues: usize, n_groups: usize) -> Vec<Vec<usize>> {
    let base = n_ues / n_groups;
    let extra = n_ues % n_groups;
    let mut groups = Vec::with_capacity(n_groups);
    let mut next = 0;
    for g in 0..n_groups {
        let size = base + usize::from(g < extra);
        groups.push((next..next + size).collect());
        next += size;
    }
    groups
}

fn run_replication(
    cfg: &ExperimentConfig,
    radio: &RadioConfig,
    r: usize,
) -> Result<(Vec<RoundRecord>, Vec<TraceEvent>), ExperimentError> {
    let rep_seed = seeds::replication(cfg.run.seed, r);
    let edge_override = (cfg.run.edge_rate_bps > 0.0).then_some(cfg.run.edge_rate_bps);
    let mut scn = Scenario::build(
        radio.clone(),
        cfg.counts.n_ues,
        cfg.counts.n_sbs,
        &cfg.profiles,
        &cfg.budget,
        edge_override,
        seeds::scenario(rep_seed),
    )?;

    let data_seed = seeds::data(rep_seed);
    let global_data = load_dataset(cfg, data_seed)?;
    let spec = PartitionSpec {
        labels_per_ue: cfg.data.labels_per_ue,
        samples_per_ue: (cfg.data.samples_per_ue_min, cfg.data.samples_per_ue_max),
        seed: crate::units::sub_seed(data_seed, 2),
    };
    let (shards, _manifest) = partition_noniid(&global_data, cfg.counts.n_ues, &spec)?;
    let pool = build_generalization_pool(&shards);
    let train_sizes: Vec<u64> = shards.iter().map(|s| s.train_idx.len() as u64).collect();
    scn.set_data_samples(&train_sizes)?;

    let assoc = form_association(&scn, cfg, rep_seed)?;
    let profile = round_delay_profile(&scn, &assoc.matching, &assoc.allocs)?;
    let system_ms = profile.system_s * 1e3;
    let total_ms = profile.total_s * 1e3;
    let per_sbs_ms: Vec<f64> = profile.per_cell_s.iter().map(|d| d * 1e3).collect();
    let swaps = assoc
        .stats
        .as_ref()
        .map(|s| s.swaps_applied as u64)
        .unwrap_or(0);

    let mut trace = Vec::new();
    let serving_codes: Vec<i64> = assoc
        .matching
        .serving
        .iter()
        .map(|sn| sn.sbs().map(|s| s as i64).unwrap_or(-1))
        .collect();
    let i_g = scn.i_global as f64;
    let (initial_system, final_system, initial_total, final_total, proposals) =
        match &assoc.stats {
            Some(s) => (
                s.initial_system_delay_s,
                s.final_system_delay_s,
                s.initial_total_delay_s,
                s.final_total_delay_s,
                s.proposals_evaluated,
            ),
            None => (
                profile.system_s * i_g,
                profile.system_s * i_g,
                profile.total_s * i_g,
                profile.total_s * i_g,
                0,
            ),
        };
    trace.push(TraceEvent::Matching {
        replication: r,
        swaps_applied: swaps as usize,
        proposals_evaluated: proposals,
        initial_system_delay_s: initial_system,
        final_system_delay_s: final_system,
        initial_total_delay_s: initial_total,
        final_total_delay_s: final_total,
        serving: serving_codes,
        swap_log: match (&assoc.stats, cfg.run.trace_matching) {
            (Some(s), true) => s.swap_log.clone(),
            _ => Vec::new(),
        },
    });

    let layout = ModelLayout {
        kind: cfg.train.model.model_kind(),
        input_dim: global_data.input_dim(),
        n_classes: global_data.n_classes,
    };
    let tcfg = cfg.train.train_config();
    let init = ModelParams::init(layout, cfg.train.model.init_sigma, seeds::init(rep_seed));
    let train_seed = seeds::train(rep_seed);
    let n_ues = cfg.counts.n_ues;

    let mut records = Vec::with_capacity(cfg.train.rounds as usize);
    let mut cumulative_ms = 0.0;

    match cfg.run.learning_scheme {
        LearningScheme::Demlearn => {
            // UEs own their models from the start: personal weights draw
            // per-UE streams, so the population begins diverse and the
            // hierarchy contracts it over rounds.
            let personal: Vec<ModelParams> = (0..n_ues)
                .map(|ue| {
                    ModelParams::init(
                        layout,
                        cfg.train.model.init_sigma,
                        seeds::init_ue(seeds::init(rep_seed), ue),
                    )
                })
                .collect();
            let mut tree =
                GroupTree::new(personal, initial_groups(n_ues, cfg.counts.n_groups))?;
            for t in 0..cfg.train.rounds {
                let mut merges: Vec<MergeStep> = Vec::new();
                if (t + 1) % tcfg.tau == 0 {
                    let trained: Vec<ModelParams> = (0..n_ues)
                        .map(|ue| {
                            local_train(
                                &tree.level0[ue],
                                &shards[ue],
                                &tree,
                                ue,
                                &tcfg,
                                seeds::round_ue(train_seed, t, ue),
                            )
                        })
                        .collect::<Result<_, _>>()?;
                    tree.level0 = trained;

                    let mut partials = Vec::new();
                    for s in 0..scn.n_sbs() {
                        let members = assoc.matching.members(s);
                        if !members.is_empty() {
                            partials.extend(partial_group_aggregate(&members, &tree)?);
                        }
                    }
                    let edge_members = assoc.matching.edge_members();
                    if !edge_members.is_empty() {
                        partials.extend(partial_group_aggregate(&edge_members, &tree)?);
                    }
                    let (level1, level2) = combine_partial_aggregates(&partials, &tree)?;
                    tree.level1 = level1;
                    tree.level2 = level2;

                    let (groups, steps) = match cfg.train.cluster.features {
                        ClusterFeatures::Weights => recluster(
                            &tree.level0,
                            cfg.counts.n_groups,
                            cfg.train.cluster.linkage,
                        )?,
                        ClusterFeatures::WeightsGrads => {
                            let vectors: Vec<Vec<f64>> = (0..n_ues)
                                .map(|ue| {
                                    let mut v = tree.level0[ue].weights.clone();
                                    v.extend(personalized_gradient(
                                        &tree.level0[ue],
                                        &shards[ue],
                                        &shards[ue].train_idx,
                                        &tree,
                                        ue,
                                        &tcfg,
                                    )?);
                                    Ok(v)
                                })
                                .collect::<Result<_, ExperimentError>>()?;
                            recluster_vectors(
                                &vectors,
                                cfg.counts.n_groups,
                                cfg.train.cluster.linkage,
                            )?
                        }
                    };
                    tree.groups = groups;
                    tree.merges = steps.clone();
                    merges = steps;
                    hierarchical_average(&mut tree)?;
                }

                cumulative_ms += system_ms;
                let report = evaluate_models(&tree.level0, &tree.level2, &shards, &pool)?;
                let record = RoundRecord {
                    replication: r,
                    round: t,
                    system_delay_ms: system_ms,
                    cumulative_delay_ms: cumulative_ms,
                    total_delay_ms: total_ms,
                    swap_count: if t == 0 { swaps } else { 0 },
                    specialization: report.specialization_mean(),
                    generalization: report.generalization_mean(),
                    regional_accuracy: report.regional_accuracy,
                    mean_pairwise_distance: report.mean_pairwise_distance,
                    per_sbs_delay_ms: per_sbs_ms.clone(),
                };
                trace.push(TraceEvent::Round {
                    record: record.clone(),
                    groups: tree.groups.clone(),
                    merges,
                });
                records.push(record);
            }
        }
        LearningScheme::Fedavg => {
            let mut global = init.clone();
            let mut clients = vec![init; n_ues];
            let all_ues: Vec<usize> = (0..n_ues).collect();
            for t in 0..cfg.train.rounds {
                if (t + 1) % tcfg.tau == 0 {
                    for (ue, client) in clients.iter_mut().enumerate() {
                        *client = fedavg_local_train(
                            &global,
                            &shards[ue],
                            ue,
                            &tcfg,
                            seeds::round_ue(train_seed, t, ue),
                        )?;
                    }
                    global = fedavg_round(&clients, &train_sizes)?;
                }

                cumulative_ms += system_ms;
                let report = evaluate_models(&clients, &global, &shards, &pool)?;
                let record = RoundRecord {
                    replication: r,
                    round: t,
                    system_delay_ms: system_ms,
                    cumulative_delay_ms: cumulative_ms,
                    total_delay_ms: total_ms,
                    swap_count: if t == 0 { swaps } else { 0 },
                    specialization: report.specialization_mean(),
                    generalization: report.generalization_mean(),
                    regional_accuracy: report.regional_accuracy,
                    mean_pairwise_distance: report.mean_pairwise_distance,
                    per_sbs_delay_ms: per_sbs_ms.clone(),
                };
                trace.push(TraceEvent::Round {
                    record: record.clone(),
                    groups: vec![all_ues.clone()],
                    merges: Vec::new(),
                });
                records.push(record);
            }
        }
    }

    Ok((records, trace))
}

/// Evaluates a model population: per-UE accuracy on own test shards and
/// on the shared pool, the top-level model on the pool, and the mean
/// pairwise distance between the per-UE models.
pub fn evaluate_models(
    personal: &[ModelParams],
    top: &ModelParams,
    shards: &[Dataset],
    pool: &Dataset,
) -> Result<MetricsReport, ExperimentError> {
    let mut specialization = Vec::with_capacity(personal.len());
    let mut generalization = Vec::with_capacity(personal.len());
    for (ue, model) in personal.iter().enumerate() {
        specialization.push(accuracy(model, &shards[ue], &shards[ue].test_idx)?);
        generalization.push(accuracy(model, pool, &pool.test_idx)?);
    }
    let regional_accuracy = accuracy(top, pool, &pool.test_idx)?;
    Ok(MetricsReport {
        specialization,
        generalization,
        regional_accuracy,
        mean_pairwise_distance: mean_pairwise(personal),
    })
}

fn mean_pairwise(models: &[ModelParams]) -> f64 {
    let n = models.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..n {
        for b in (a + 1)..n {
            total += models[a].distance(&models[b]);
        }
    }
    total / (n as f64 * (n as f64 - 1.0) / 2.0)
}

/// One measured association run of the benchmark.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BenchRecord {
    pub n_ues: usize,
    pub n_sbs: usize,
    pub replication: usize,
    pub swaps_applied: usize,
    pub proposals_evaluated: usize,
    pub scans: usize,
    pub initial_system_delay_s: f64,
    pub final_system_delay_s: f64,
    pub initial_total_delay_s: f64,
    pub final_total_delay_s: f64,
    pub wall_time_s: f64,
}

/// Runs the swap-matching association across UE counts and reports the
/// per-run telemetry. Wall time is informational; everything else is
/// deterministic under the configured seed.
pub fn matching_bench(
    cfg: &ExperimentConfig,
    ue_counts: &[usize],
    replications: usize,
) -> Result<Vec<BenchRecord>, ExperimentError> {
    let n_sbs = cfg.counts.n_sbs;
    let radio = cfg.radio_for_counts();
    let edge_override = (cfg.run.edge_rate_bps > 0.0).then_some(cfg.run.edge_rate_bps);
    let mut out = Vec::with_capacity(ue_counts.len() * replications);
    for &n in ue_counts {
        if n == 0 {
            return Err(ExperimentError::Config(
                "benchmark ue counts must be positive".into(),
            ));
        }
        let quota = if cfg.run.quota_per_sbs == 0 {
            n
        } else {
            cfg.run.quota_per_sbs
        };
        let quotas = vec![quota; n_sbs];
        for rep in 0..replications {
            let rep_seed = seeds::replication(cfg.run.seed, rep);
            let scn_seed = crate::units::sub_seed(seeds::scenario(rep_seed), n as u64);
            let scn = Scenario::build(
                radio.clone(),
                n,
                n_sbs,
                &cfg.profiles,
                &cfg.budget,
                edge_override,
                scn_seed,
            )?;
            let outcome = run_matching(&scn, &quotas)?;
            out.push(BenchRecord {
                n_ues: n,
                n_sbs,
                replication: rep,
                swaps_applied: outcome.stats.swaps_applied,
                proposals_evaluated: outcome.stats.proposals_evaluated,
                scans: outcome.stats.scans,
                initial_system_delay_s: outcome.stats.initial_system_delay_s,
                final_system_delay_s: outcome.stats.final_system_delay_s,
                initial_total_delay_s: outcome.stats.initial_total_delay_s,
                final_total_delay_s: outcome.stats.final_total_delay_s,
                wall_time_s: outcome.stats.wall_time_s,
            });
        }
    }
    Ok(out)
}
