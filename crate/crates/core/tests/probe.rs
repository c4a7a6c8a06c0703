//! Temporary forensic probe.

mod common;

use edgedem_core::radio::RadioConfig;
use edgedem_core::matching::{baseline_optimal, run_matching, system_delay_s};
use edgedem_core::scenario::{BudgetDraw, ProfileDraw, Scenario};

fn matching_scenario(n_ues: usize, n_sbs: usize, seed: u64) -> Scenario {
    let radio = RadioConfig::default().with_even_subbands(n_sbs);
    Scenario::build(
        radio,
        n_ues,
        n_sbs,
        &ProfileDraw::default(),
        &BudgetDraw::default(),
        None,
        seed,
    )
    .unwrap()
}

#[test]
fn probe_instance_49_neighborhood() {
    use edgedem_core::matching::{initial_association, solve_allocations, Matching};
    use edgedem_core::types::ServingNode;
    let scn = matching_scenario(8, 3, 2049);
    let quotas = vec![8usize; 3];
    let init = initial_association(&scn, &quotas);
    println!("init {:?}", init.serving);
    for n in 0..8 {
        println!("  edge delay ue{n}: {:.3}", scn.edge_round_delay_s(n));
    }
    let s = |v: Vec<usize>| -> Vec<ServingNode> {
        v.into_iter()
            .map(|x| {
                if x == 9 {
                    ServingNode::Edge
                } else {
                    ServingNode::Sbs(x)
                }
            })
            .collect()
    };
    let cases = vec![
        ("stable", s(vec![2, 2, 2, 2, 2, 0, 2, 1])),
        ("ue4->sbs1", s(vec![2, 2, 2, 2, 1, 0, 2, 1])),
        ("ue4<->ue5", s(vec![2, 2, 2, 2, 0, 2, 2, 1])),
        ("ue4<->ue7", s(vec![2, 2, 2, 2, 1, 0, 2, 2])),
        ("optimal", s(vec![2, 2, 2, 2, 1, 2, 2, 0])),
        ("ue4->edge", s(vec![2, 2, 2, 2, 9, 0, 2, 1])),
        ("ue7->sbs0", s(vec![2, 2, 2, 2, 2, 0, 2, 0])),
        ("ue4->sbs0", s(vec![2, 2, 2, 2, 0, 0, 2, 1])),
    ];
    for (name, serving) in cases {
        let m = Matching {
            serving,
            quotas: quotas.clone(),
        };
        let allocs = solve_allocations(&scn, &m).unwrap();
        let d = system_delay_s(&scn, &m, &allocs).unwrap();
        let profile = edgedem_core::matching::round_delay_profile(&scn, &m, &allocs).unwrap();
        println!(
            "{name}: system {d:.3} per_cell {:?}",
            profile
                .per_cell_s
                .iter()
                .map(|x| (x * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        );
    }
}

#[test]
fn probe_instance_49() {
    for i in [29usize, 49] {
        let n = 4 + i % 5;
        let scn = matching_scenario(n, 3, 2000 + i as u64);
        let quotas = vec![n; 3];
        let prop = run_matching(&scn, &quotas).unwrap();
        let opt = baseline_optimal(&scn, &quotas).unwrap();
        let d_prop = system_delay_s(&scn, &prop.matching, &prop.allocs).unwrap();
        let d_opt = system_delay_s(&scn, &opt.matching, &opt.allocs).unwrap();
        println!(
            "instance {i}: prop {:?} ({d_prop:.3}), opt {:?} ({d_opt:.3}), swaps {}",
            prop.matching.serving, opt.matching.serving, prop.stats.swaps_applied
        );
        let profile_p =
            edgedem_core::matching::round_delay_profile(&scn, &prop.matching, &prop.allocs)
                .unwrap();
        let profile_o =
            edgedem_core::matching::round_delay_profile(&scn, &opt.matching, &opt.allocs)
                .unwrap();
        println!("  prop per_ue {:?}", profile_p.per_ue_s);
        println!("  opt  per_ue {:?}", profile_o.per_ue_s);
    }
}

#[test]
fn probe_gap_distribution() {
    for base in [2000u64, 3000, 5000, 7000, 9000, 11000] {
        let mut worst = (0usize, 0.0f64);
        let mut sum = 0.0;
        let mut over = 0usize;
        for i in 0..50usize {
            let n = 4 + i % 5;
            let scn = matching_scenario(n, 3, base + i as u64);
            let quotas = vec![n; 3];
            let prop = run_matching(&scn, &quotas).unwrap();
            let opt = baseline_optimal(&scn, &quotas).unwrap();
            let d_prop = system_delay_s(&scn, &prop.matching, &prop.allocs).unwrap();
            let d_opt = system_delay_s(&scn, &opt.matching, &opt.allocs).unwrap();
            let gap = d_prop / d_opt - 1.0;
            sum += gap;
            if gap > 0.05 {
                over += 1;
            }
            if gap > worst.1 {
                worst = (i, gap);
            }
        }
        println!(
            "base {base}: mean gap {:.4}, {} over 5%, worst instance {} at {:.4}",
            sum / 50.0,
            over,
            worst.0,
            worst.1
        );
    }
}

#[test]
fn probe_learning_sweep() {
    use edgedem_core::experiment::{run_experiment, ExperimentConfig, LearningScheme};
    for &(spread, eta, lr, epochs, lambda) in &[
        (0.6f64, 10.0f64, 0.1f64, 20usize, 0.02f64),
        (0.6, 20.0, 0.1, 20, 0.02),
        (0.6, 50.0, 0.1, 20, 0.02),
        (0.6, 10.0, 0.1, 20, 0.05),
        (0.6, 20.0, 0.1, 20, 0.05),
        (0.6, 50.0, 0.1, 20, 0.05),
    ] {
        let mut cfg = ExperimentConfig::default();
        cfg.counts.n_ues = 50;
        cfg.counts.n_sbs = 5;
        cfg.counts.n_groups = 3;
        cfg.data.n_classes = 10;
        cfg.data.input_dim = 10;
        cfg.data.n_samples = 30000;
        cfg.data.labels_per_ue = 2;
        cfg.data.spread = spread;
        cfg.train.rounds = 30;
        cfg.train.learning_rate = lr;
        cfg.train.eta = eta;
        cfg.train.local_epochs = epochs;
        cfg.train.reg = edgedem_core::demlearn::Regularizer::L2;
        cfg.train.reg_weight = lambda;
        cfg.run.replications = 1;
        cfg.run.seed = 42;
        cfg.run.workers = 1;

        cfg.run.learning_scheme = LearningScheme::Demlearn;
        let dem = run_experiment(&cfg).unwrap();
        cfg.run.learning_scheme = LearningScheme::Fedavg;
        let fed = run_experiment(&cfg).unwrap();

        let rounds = cfg.train.rounds as usize;
        let mut per_round = vec![(0.0f64, 0usize); rounds];
        for rec in &dem.records {
            let slot = &mut per_round[rec.round as usize];
            slot.0 += rec.mean_pairwise_distance;
            slot.1 += 1;
        }
        let dist: Vec<f64> = per_round.iter().map(|(s, c)| s / *c as f64).collect();
        let mut falls = 0;
        for w in dist.windows(2) {
            if w[1] < w[0] {
                falls += 1;
            }
        }
        let xs: Vec<f64> = (0..rounds).map(|t| t as f64).collect();
        let (rho, pval) = common::spearman_negative(&xs, &dist);
        println!(
            "spread {spread} eta {eta} lr {lr} ep {epochs} l2 {lambda}: dem gen {:.3} spec {:.3} | fed gen {:.3} spec {:.3} | dist first {:.3} mid {:.3} last {:.3} falls {falls}/29 rho {rho:.3} p {pval:.2e}",
            dem.summary.generalization_mean,
            dem.summary.specialization_mean,
            fed.summary.generalization_mean,
            fed.summary.specialization_mean,
            dist[0],
            dist[rounds / 2],
            dist[rounds - 1]
        );
    }
}
