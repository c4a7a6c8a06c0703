//! UE-to-SBS association by two-sided swap matching, plus baselines.
//!
//! Association starts from deferred acceptance on received signal power.
//! The swap phase then scans, in a fixed deterministic order, all pair
//! exchanges and all single moves into free quota slots. A proposal is
//! approved when the system completion time (the slowest UE, which gates
//! every round) strictly decreases; that makes the system delay a
//! potential function, so the process terminates and the result has no
//! remaining approvable proposal.
//!
//! Externalities are contained: a candidate swap re-solves the bandwidth
//! allocation of the two affected cells only, while all other cells keep
//! their solved allocations.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alloc::{solve_beta, AllocError, AllocSolution, DEFAULT_TOL_S};
use crate::scenario::Scenario;
use crate::types::{Association, ServingNode};

/// Relative margin a swap must clear on the system completion time.
/// Guards against approving bisection-level float jitter and then undoing
/// it forever.
const STRICT_DECREASE_MARGIN: f64 = 1e-7;

/// Hard cap on approved swaps before declaring non-termination.
const MAX_SWAPS: usize = 100_000;

/// Largest number of assignments exhaustive search will enumerate.
const MAX_ENUMERATION: f64 = 1e7;

/// Errors from association and baseline computation.
#[derive(Debug, Error)]
pub enum MatchError {
    /// A cell holds more members than its quota.
    #[error("sbs {sbs} exceeds its quota")]
    QuotaExceeded { sbs: usize },
    /// A UE is missing from the assignment vector.
    #[error("ue {0} has no serving node")]
    UnassignedUe(usize),
    /// The swap phase exceeded the swap cap.
    #[error("matching did not terminate within {swaps} swaps")]
    NonTermination { swaps: usize },
    /// Exhaustive enumeration would visit too many assignments.
    #[error("exhaustive search would enumerate {combos:.3e} assignments")]
    TooLarge { combos: f64 },
    /// A cell allocation failed.
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

/// An association of every UE to an SBS or the edge node, with quotas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Matching {
    /// Serving node per UE.
    pub serving: Vec<ServingNode>,
    /// Member cap per SBS.
    pub quotas: Vec<usize>,
}

impl Matching {
    /// UEs served by SBS `s`, ascending.
    pub fn members(&self, s: usize) -> Vec<usize> {
        self.serving
            .iter()
            .enumerate()
            .filter(|(_, node)| **node == ServingNode::Sbs(s))
            .map(|(n, _)| n)
            .collect()
    }

    /// UEs served by the edge node, ascending.
    pub fn edge_members(&self) -> Vec<usize> {
        self.serving
            .iter()
            .enumerate()
            .filter(|(_, node)| **node == ServingNode::Edge)
            .map(|(n, _)| n)
            .collect()
    }

    /// Checks coverage and quota feasibility.
    pub fn validate(&self, n_ues: usize) -> Result<(), MatchError> {
        if self.serving.len() != n_ues {
            return Err(MatchError::UnassignedUe(self.serving.len().min(n_ues)));
        }
        for s in 0..self.quotas.len() {
            if self.members(s).len() > self.quotas[s] {
                return Err(MatchError::QuotaExceeded { sbs: s });
            }
        }
        Ok(())
    }
}

/// What preference lists are derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreferenceBasis {
    /// Received signal power; used before any delay information exists.
    Rsrp,
    /// Achievable one-round delay at a full subband share.
    Latency,
}

/// Ranked preference lists for both sides of the market.
#[derive(Debug, Clone)]
pub struct PreferenceState {
    /// Per UE: SBS indices, most preferred first.
    pub ue_prefs: Vec<Vec<usize>>,
    /// Per SBS: UE indices, most preferred first.
    pub sbs_prefs: Vec<Vec<usize>>,
    /// Basis the lists were derived from.
    pub basis: PreferenceBasis,
}

/// One candidate reassignment: a pair exchange when `ue_b` is set,
/// otherwise a single move of `ue_a` into free quota.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwapProposal {
    pub ue_a: usize,
    pub ue_b: Option<usize>,
    pub from: ServingNode,
    pub to: ServingNode,
}

/// One approved swap, for trace output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwapLogEntry {
    pub index: usize,
    pub ue_a: usize,
    pub ue_b: Option<usize>,
    pub from: ServingNode,
    pub to: ServingNode,
    pub total_delay_before_s: f64,
    pub total_delay_after_s: f64,
    pub system_delay_before_s: f64,
    pub system_delay_after_s: f64,
}

/// Telemetry from one matching run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchingStats {
    pub swaps_applied: usize,
    pub proposals_evaluated: usize,
    pub scans: usize,
    pub wall_time_s: f64,
    pub initial_total_delay_s: f64,
    pub final_total_delay_s: f64,
    pub initial_system_delay_s: f64,
    pub final_system_delay_s: f64,
    pub swap_log: Vec<SwapLogEntry>,
}

/// A matching together with its per-cell allocations and telemetry.
#[derive(Debug, Clone)]
pub struct MatchingOutcome {
    pub matching: Matching,
    pub allocs: Vec<Option<AllocSolution>>,
    pub stats: MatchingStats,
}

impl MatchingOutcome {
    /// Flattens the outcome into a per-UE association.
    pub fn association(&self, scn: &Scenario) -> Association {
        to_association(scn, &self.matching, &self.allocs)
    }
}

/// Builds the per-UE association implied by a matching and its allocations.
pub fn to_association(
    scn: &Scenario,
    matching: &Matching,
    allocs: &[Option<AllocSolution>],
) -> Association {
    let n_ues = matching.serving.len();
    let mut beta = vec![1.0; n_ues];
    for s in 0..scn.n_sbs() {
        if let Some(alloc) = &allocs[s] {
            let members = matching.members(s);
            for (i, &n) in members.iter().enumerate() {
                beta[n] = alloc.beta[i];
            }
        }
    }
    Association {
        serving: matching.serving.clone(),
        beta,
        cpu_freq_hz: scn.profiles.iter().map(|p| p.cpu_freq_max_hz).collect(),
    }
}

/// Builds both sides' preference lists under the given basis.
pub fn build_preferences(scn: &Scenario, basis: PreferenceBasis) -> PreferenceState {
    let n_ues = scn.n_ues();
    let n_sbs = scn.n_sbs();
    // Lower key is better on both sides; ties break on the lower index.
    let ue_key = |n: usize, s: usize| -> f64 {
        match basis {
            PreferenceBasis::Rsrp => -scn.net.rsrp_dbm[[n, s]],
            PreferenceBasis::Latency => full_share_delay(scn, n, s),
        }
    };
    let mut ue_prefs = Vec::with_capacity(n_ues);
    for n in 0..n_ues {
        let mut order: Vec<usize> = (0..n_sbs).collect();
        order.sort_by(|&a, &b| {
            ue_key(n, a)
                .partial_cmp(&ue_key(n, b))
                .unwrap()
                .then(a.cmp(&b))
        });
        ue_prefs.push(order);
    }
    let mut sbs_prefs = Vec::with_capacity(n_sbs);
    for s in 0..n_sbs {
        let mut order: Vec<usize> = (0..n_ues).collect();
        order.sort_by(|&a, &b| {
            ue_key(a, s)
                .partial_cmp(&ue_key(b, s))
                .unwrap()
                .then(a.cmp(&b))
        });
        sbs_prefs.push(order);
    }
    PreferenceState {
        ue_prefs,
        sbs_prefs,
        basis,
    }
}

/// One-round delay of UE `n` at SBS `s` when granted the full share.
fn full_share_delay(scn: &Scenario, n: usize, s: usize) -> f64 {
    scn.com_bits(n) / scn.rate_coeff(n, s) + scn.comp_s(n)
}

/// Deferred acceptance: UEs propose down their lists, SBSs keep the best
/// members within quota. UEs rejected everywhere land on the edge node.
fn deferred_acceptance(
    n_ues: usize,
    quotas: &[usize],
    ue_prefs: &[Vec<usize>],
    sbs_prefers: impl Fn(usize, usize, usize) -> bool,
) -> Vec<ServingNode> {
    let n_sbs = quotas.len();
    let mut next_choice = vec![0usize; n_ues];
    let mut assigned: Vec<Option<usize>> = vec![None; n_ues];
    let mut held: Vec<Vec<usize>> = vec![Vec::new(); n_sbs];

    loop {
        let proposer = (0..n_ues)
            .find(|&n| assigned[n].is_none() && next_choice[n] < ue_prefs[n].len());
        let Some(n) = proposer else { break };
        let s = ue_prefs[n][next_choice[n]];
        next_choice[n] += 1;
        if held[s].len() < quotas[s] {
            held[s].push(n);
            assigned[n] = Some(s);
        } else if quotas[s] > 0 {
            // Find the least preferred current member.
            let mut worst_pos = 0;
            for i in 1..held[s].len() {
                if sbs_prefers(s, held[s][worst_pos], held[s][i]) {
                    worst_pos = i;
                }
            }
            let worst = held[s][worst_pos];
            if sbs_prefers(s, n, worst) {
                held[s][worst_pos] = n;
                assigned[worst] = None;
                assigned[n] = Some(s);
            }
        }
    }

    (0..n_ues)
        .map(|n| match assigned[n] {
            Some(s) => ServingNode::Sbs(s),
            None => ServingNode::Edge,
        })
        .collect()
}

/// Initial association: deferred acceptance with both sides ranking by
/// received signal power. Overflow UEs go to the edge node.
pub fn initial_association(scn: &Scenario, quotas: &[usize]) -> Matching {
    let prefs = build_preferences(scn, PreferenceBasis::Rsrp);
    let serving = deferred_acceptance(scn.n_ues(), quotas, &prefs.ue_prefs, |s, a, b| {
        let ka = (-scn.net.rsrp_dbm[[a, s]], a);
        let kb = (-scn.net.rsrp_dbm[[b, s]], b);
        ka < kb
    });
    Matching {
        serving,
        quotas: quotas.to_vec(),
    }
}

/// Working state of the swap phase: memberships, per-cell allocations,
/// and per-UE one-round delays, kept mutually consistent.
struct WorkState {
    serving: Vec<ServingNode>,
    quotas: Vec<usize>,
    members: Vec<Vec<usize>>,
    allocs: Vec<Option<AllocSolution>>,
    ue_round_delay: Vec<f64>,
    cell_round_delay: Vec<f64>,
}

/// Result of re-solving one cell for a hypothetical membership.
struct CellSolve {
    members: Vec<usize>,
    alloc: Option<AllocSolution>,
    member_delays: Vec<(usize, f64)>,
    cell_round_delay: f64,
}

fn solve_cell(scn: &Scenario, sbs: usize, members: Vec<usize>) -> Result<CellSolve, MatchError> {
    if members.is_empty() {
        return Ok(CellSolve {
            members,
            alloc: None,
            member_delays: Vec::new(),
            cell_round_delay: 0.0,
        });
    }
    let problem = scn.alloc_problem(sbs, &members);
    let alloc = solve_beta(&problem, DEFAULT_TOL_S)?;
    let mut member_delays = Vec::with_capacity(members.len());
    let mut worst = f64::NEG_INFINITY;
    for (i, &n) in members.iter().enumerate() {
        let d = problem.member_delay(i, alloc.beta[i]);
        worst = worst.max(d);
        member_delays.push((n, d));
    }
    Ok(CellSolve {
        members,
        alloc: Some(alloc),
        member_delays,
        cell_round_delay: worst,
    })
}

impl WorkState {
    fn build(
        scn: &Scenario,
        matching: &Matching,
        allocs: Option<&[Option<AllocSolution>]>,
    ) -> Result<WorkState, MatchError> {
        matching.validate(scn.n_ues())?;
        let n_sbs = scn.n_sbs();
        let mut state = WorkState {
            serving: matching.serving.clone(),
            quotas: matching.quotas.clone(),
            members: (0..n_sbs).map(|s| matching.members(s)).collect(),
            allocs: vec![None; n_sbs],
            ue_round_delay: vec![0.0; scn.n_ues()],
            cell_round_delay: vec![0.0; n_sbs],
        };
        for n in 0..scn.n_ues() {
            if state.serving[n] == ServingNode::Edge {
                state.ue_round_delay[n] = scn.edge_round_delay_s(n);
            }
        }
        for s in 0..n_sbs {
            let reuse = allocs
                .and_then(|a| a[s].clone())
                .filter(|a| a.beta.len() == state.members[s].len());
            let solved = match reuse {
                Some(alloc) if !state.members[s].is_empty() => {
                    let problem = scn.alloc_problem(s, &state.members[s]);
                    let mut member_delays = Vec::new();
                    let mut worst = f64::NEG_INFINITY;
                    for (i, &n) in state.members[s].iter().enumerate() {
                        let d = problem.member_delay(i, alloc.beta[i]);
                        worst = worst.max(d);
                        member_delays.push((n, d));
                    }
                    CellSolve {
                        members: state.members[s].clone(),
                        alloc: Some(alloc),
                        member_delays,
                        cell_round_delay: worst,
                    }
                }
                _ => solve_cell(scn, s, state.members[s].clone())?,
            };
            state.install(s, solved);
        }
        Ok(state)
    }

    fn install(&mut self, s: usize, solved: CellSolve) {
        for &(n, d) in &solved.member_delays {
            self.ue_round_delay[n] = d;
        }
        self.cell_round_delay[s] = solved.cell_round_delay;
        self.members[s] = solved.members;
        self.allocs[s] = solved.alloc;
    }

    fn total_round_delay(&self) -> f64 {
        self.ue_round_delay.iter().sum()
    }

    fn system_round_delay(&self) -> f64 {
        self.ue_round_delay.iter().cloned().fold(0.0, f64::max)
    }

    /// Completion-time the given UE experiences: its cell's worst member
    /// for SBS-served UEs, its own delay on the edge node.
    fn perceived_round_delay(&self, n: usize) -> f64 {
        match self.serving[n] {
            ServingNode::Sbs(s) => self.cell_round_delay[s],
            ServingNode::Edge => self.ue_round_delay[n],
        }
    }

    fn without(&self, s: usize, n: usize) -> Vec<usize> {
        self.members[s].iter().cloned().filter(|&m| m != n).collect()
    }

    fn with(&self, s: usize, n: usize) -> Vec<usize> {
        let mut m = self.members[s].clone();
        let pos = m.binary_search(&n).unwrap_err();
        m.insert(pos, n);
        m
    }
}

/// A fully evaluated, approvable proposal, ready to apply.
struct PendingSwap {
    proposal: SwapProposal,
    new_cells: Vec<(usize, CellSolve)>,
    edge_movers: Vec<usize>,
    total_after: f64,
    system_after: f64,
}

/// Evaluates one candidate against the approval rule.
fn evaluate_candidate(
    scn: &Scenario,
    state: &WorkState,
    ue_a: usize,
    target: Result<usize, usize>,
) -> Result<Option<PendingSwap>, MatchError> {
    let from = state.serving[ue_a];
    let (ue_b, to) = match target {
        Ok(partner) => (Some(partner), state.serving[partner]),
        Err(sbs_to) => (None, ServingNode::Sbs(sbs_to)),
    };
    if from == to {
        return Ok(None);
    }
    if let (None, ServingNode::Sbs(s_to)) = (ue_b, to) {
        if state.members[s_to].len() >= state.quotas[s_to] {
            return Ok(None);
        }
    }

    let mut new_cells: Vec<(usize, CellSolve)> = Vec::new();
    let mut edge_movers: Vec<usize> = Vec::new();
    if let ServingNode::Sbs(s) = from {
        let mut members = state.without(s, ue_a);
        if let Some(b) = ue_b {
            let pos = members.binary_search(&b).unwrap_err();
            members.insert(pos, b);
        }
        new_cells.push((s, solve_cell(scn, s, members)?));
    } else if let Some(b) = ue_b {
        edge_movers.push(b);
    }
    if let ServingNode::Sbs(s) = to {
        let mut members = state.with(s, ue_a);
        if let Some(b) = ue_b {
            members.retain(|&m| m != b);
        }
        new_cells.push((s, solve_cell(scn, s, members)?));
    } else {
        edge_movers.push(ue_a);
    }

    // Per-UE delays after the hypothetical swap.
    let mut new_delay = state.ue_round_delay.clone();
    for (_, solved) in &new_cells {
        for &(n, d) in &solved.member_delays {
            new_delay[n] = d;
        }
    }
    for &n in &edge_movers {
        new_delay[n] = scn.edge_round_delay_s(n);
    }

    let system_before = state.system_round_delay();
    let system_after = new_delay.iter().cloned().fold(0.0, f64::max);
    if !(system_after <= system_before * (1.0 - STRICT_DECREASE_MARGIN)) {
        return Ok(None);
    }
    let total_after: f64 = new_delay.iter().sum();

    Ok(Some(PendingSwap {
        proposal: SwapProposal {
            ue_a,
            ue_b,
            from,
            to,
        },
        new_cells,
        edge_movers,
        total_after,
        system_after,
    }))
}

/// Scans all candidates in deterministic order: for each UE `n` ascending,
/// pair swaps with every later UE, then single moves into each SBS.
/// Returns the first approvable proposal.
fn scan_first(
    scn: &Scenario,
    state: &WorkState,
    evaluated: &mut usize,
) -> Result<Option<PendingSwap>, MatchError> {
    let n_ues = scn.n_ues();
    let n_sbs = scn.n_sbs();
    for n in 0..n_ues {
        for partner in (n + 1)..n_ues {
            *evaluated += 1;
            if let Some(pending) = evaluate_candidate(scn, state, n, Ok(partner))? {
                return Ok(Some(pending));
            }
        }
        for s_to in 0..n_sbs {
            *evaluated += 1;
            if let Some(pending) = evaluate_candidate(scn, state, n, Err(s_to))? {
                return Ok(Some(pending));
            }
        }
    }
    Ok(None)
}

/// Scans every candidate in the same deterministic order and keeps the
/// approvable proposal with the lowest resulting system delay (summed
/// delay, then scan order, break ties). Steepest descent reaches better
/// stable points than first-found while stability itself is unchanged:
/// both scans approve from the same candidate set.
fn scan_best(
    scn: &Scenario,
    state: &WorkState,
    evaluated: &mut usize,
) -> Result<Option<PendingSwap>, MatchError> {
    let n_ues = scn.n_ues();
    let n_sbs = scn.n_sbs();
    let mut best: Option<PendingSwap> = None;
    let mut consider = |candidate: PendingSwap| {
        let better = match &best {
            None => true,
            Some(b) => {
                candidate.system_after < b.system_after
                    || (candidate.system_after == b.system_after
                        && candidate.total_after < b.total_after)
            }
        };
        if better {
            best = Some(candidate);
        }
    };
    for n in 0..n_ues {
        for partner in (n + 1)..n_ues {
            *evaluated += 1;
            if let Some(pending) = evaluate_candidate(scn, state, n, Ok(partner))? {
                consider(pending);
            }
        }
        for s_to in 0..n_sbs {
            *evaluated += 1;
            if let Some(pending) = evaluate_candidate(scn, state, n, Err(s_to))? {
                consider(pending);
            }
        }
    }
    Ok(best)
}

/// Finds the first approvable proposal for an existing matching, or `None`
/// if the matching is stable under the approval rule.
pub fn find_swap_blocking_pair(
    scn: &Scenario,
    matching: &Matching,
    allocs: &[Option<AllocSolution>],
) -> Result<Option<SwapProposal>, MatchError> {
    let state = WorkState::build(scn, matching, Some(allocs))?;
    let mut evaluated = 0;
    Ok(scan_first(scn, &state, &mut evaluated)?.map(|p| p.proposal))
}

/// Runs the swap phase from the signal-power initial association.
pub fn run_matching(scn: &Scenario, quotas: &[usize]) -> Result<MatchingOutcome, MatchError> {
    run_matching_from(scn, initial_association(scn, quotas))
}

/// Runs the swap phase from a given starting matching.
pub fn run_matching_from(scn: &Scenario, start: Matching) -> Result<MatchingOutcome, MatchError> {
    let started = Instant::now();
    let mut state = WorkState::build(scn, &start, None)?;
    let i_g = scn.i_global as f64;

    let initial_total = state.total_round_delay() * i_g;
    let initial_system = state.system_round_delay() * i_g;
    let mut stats = MatchingStats {
        swaps_applied: 0,
        proposals_evaluated: 0,
        scans: 0,
        wall_time_s: 0.0,
        initial_total_delay_s: initial_total,
        final_total_delay_s: initial_total,
        initial_system_delay_s: initial_system,
        final_system_delay_s: initial_system,
        swap_log: Vec::new(),
    };

    loop {
        stats.scans += 1;
        let Some(pending) = scan_best(scn, &state, &mut stats.proposals_evaluated)? else {
            break;
        };
        let total_before = state.total_round_delay();
        let system_before = state.system_round_delay();

        state.serving[pending.proposal.ue_a] = pending.proposal.to;
        if let Some(b) = pending.proposal.ue_b {
            state.serving[b] = pending.proposal.from;
        }
        for (s, solved) in pending.new_cells {
            state.install(s, solved);
        }
        for n in pending.edge_movers {
            state.ue_round_delay[n] = scn.edge_round_delay_s(n);
        }

        stats.swaps_applied += 1;
        stats.swap_log.push(SwapLogEntry {
            index: stats.swaps_applied,
            ue_a: pending.proposal.ue_a,
            ue_b: pending.proposal.ue_b,
            from: pending.proposal.from,
            to: pending.proposal.to,
            total_delay_before_s: total_before * i_g,
            total_delay_after_s: pending.total_after * i_g,
            system_delay_before_s: system_before * i_g,
            system_delay_after_s: state.system_round_delay() * i_g,
        });
        if stats.swaps_applied > MAX_SWAPS {
            return Err(MatchError::NonTermination {
                swaps: stats.swaps_applied,
            });
        }
    }

    stats.final_total_delay_s = state.total_round_delay() * i_g;
    stats.final_system_delay_s = state.system_round_delay() * i_g;
    stats.wall_time_s = started.elapsed().as_secs_f64();

    Ok(MatchingOutcome {
        matching: Matching {
            serving: state.serving.clone(),
            quotas: state.quotas.clone(),
        },
        allocs: state.allocs,
        stats,
    })
}

/// Completion time across all global rounds, seconds: slowest UE bound.
pub fn system_delay_s(
    scn: &Scenario,
    matching: &Matching,
    allocs: &[Option<AllocSolution>],
) -> Result<f64, MatchError> {
    let state = WorkState::build(scn, matching, Some(allocs))?;
    Ok(state.system_round_delay() * scn.i_global as f64)
}

/// Sum of all UEs' completion times across all global rounds, seconds.
pub fn total_delay_s(
    scn: &Scenario,
    matching: &Matching,
    allocs: &[Option<AllocSolution>],
) -> Result<f64, MatchError> {
    let state = WorkState::build(scn, matching, Some(allocs))?;
    Ok(state.total_round_delay() * scn.i_global as f64)
}

/// Min-max bandwidth allocations for every nonempty cell of a matching.
pub fn solve_allocations(
    scn: &Scenario,
    matching: &Matching,
) -> Result<Vec<Option<AllocSolution>>, MatchError> {
    let state = WorkState::build(scn, matching, None)?;
    Ok(state.allocs)
}

/// One-round delay breakdown of an association, in seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundDelayProfile {
    /// Completion time per UE.
    pub per_ue_s: Vec<f64>,
    /// Worst member completion time per SBS cell; 0 for empty cells.
    pub per_cell_s: Vec<f64>,
    /// Worst completion time among edge-served UEs; 0 when none.
    pub edge_worst_s: f64,
    /// Slowest UE in the system.
    pub system_s: f64,
    /// Sum of per-UE completion times.
    pub total_s: f64,
}

/// Computes the one-round delay breakdown for a matching and its
/// allocations.
pub fn round_delay_profile(
    scn: &Scenario,
    matching: &Matching,
    allocs: &[Option<AllocSolution>],
) -> Result<RoundDelayProfile, MatchError> {
    let state = WorkState::build(scn, matching, Some(allocs))?;
    let edge_worst = (0..scn.n_ues())
        .filter(|&n| state.serving[n] == ServingNode::Edge)
        .map(|n| state.ue_round_delay[n])
        .fold(0.0, f64::max);
    Ok(RoundDelayProfile {
        per_ue_s: state.ue_round_delay.clone(),
        per_cell_s: state.cell_round_delay.clone(),
        edge_worst_s: edge_worst,
        system_s: state.system_round_delay(),
        total_s: state.total_round_delay(),
    })
}

/// UE-side utility: the negated completion time of the cell serving it
/// (its own completion time when on the edge node).
pub fn ue_utility(
    scn: &Scenario,
    matching: &Matching,
    allocs: &[Option<AllocSolution>],
    ue: usize,
) -> Result<f64, MatchError> {
    let state = WorkState::build(scn, matching, Some(allocs))?;
    Ok(-(state.perceived_round_delay(ue) * scn.i_global as f64))
}

/// SBS-side utility per cell: the negated sum of its members' completion
/// times across all rounds. Empty cells score zero.
pub fn sbs_utility(
    scn: &Scenario,
    matching: &Matching,
    allocs: &[Option<AllocSolution>],
) -> Result<Vec<f64>, MatchError> {
    let state = WorkState::build(scn, matching, Some(allocs))?;
    let i_g = scn.i_global as f64;
    Ok((0..scn.n_sbs())
        .map(|s| {
            -state.members[s]
                .iter()
                .map(|&n| state.ue_round_delay[n] * i_g)
                .sum::<f64>()
        })
        .collect())
}

/// Random baseline: each UE picks among SBSs with free quota with
/// probability inversely proportional to distance; no free quota anywhere
/// sends it to the edge node.
pub fn baseline_random(scn: &Scenario, quotas: &[usize], seed: u64) -> Matching {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sbs = scn.n_sbs();
    let mut load = vec![0usize; n_sbs];
    let mut serving = Vec::with_capacity(scn.n_ues());
    for n in 0..scn.n_ues() {
        let open: Vec<usize> = (0..n_sbs).filter(|&s| load[s] < quotas[s]).collect();
        if open.is_empty() {
            serving.push(ServingNode::Edge);
            continue;
        }
        let ue = scn.net.ue_positions[n];
        let weights: Vec<f64> = open
            .iter()
            .map(|&s| {
                let sbs = scn.net.sbs_positions[s];
                let d = ((ue[0] - sbs[0]).powi(2) + (ue[1] - sbs[1]).powi(2))
                    .sqrt()
                    .max(scn.radio.min_link_distance_m);
                1.0 / d
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let draw = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = open[open.len() - 1];
        for (i, &s) in open.iter().enumerate() {
            acc += weights[i];
            if draw < acc {
                chosen = s;
                break;
            }
        }
        load[chosen] += 1;
        serving.push(ServingNode::Sbs(chosen));
    }
    Matching {
        serving,
        quotas: quotas.to_vec(),
    }
}

/// Uniform baseline allocation: every member of a cell gets an equal
/// fraction of the cell's share.
pub fn baseline_uniform_alloc(
    scn: &Scenario,
    matching: &Matching,
) -> Vec<Option<AllocSolution>> {
    (0..scn.n_sbs())
        .map(|s| {
            let members = matching.members(s);
            if members.is_empty() {
                return None;
            }
            let k = members.len() as f64;
            let beta = vec![1.0 / k; members.len()];
            let problem = scn.alloc_problem(s, &members);
            Some(AllocSolution {
                objective_s: problem.objective(&beta),
                cpu_freq_hz: problem.cpu_freq_hz.clone(),
                beta,
                iterations: 0,
            })
        })
        .collect()
}

/// One-sided baseline: deferred acceptance where UEs rank by signal power
/// (frozen) and SBSs rank by the one-round delay a UE would incur.
pub fn baseline_one_sided(scn: &Scenario, quotas: &[usize]) -> Matching {
    let prefs = build_preferences(scn, PreferenceBasis::Rsrp);
    let serving = deferred_acceptance(scn.n_ues(), quotas, &prefs.ue_prefs, |s, a, b| {
        let ka = (full_share_delay(scn, a, s), a);
        let kb = (full_share_delay(scn, b, s), b);
        ka < kb
    });
    Matching {
        serving,
        quotas: quotas.to_vec(),
    }
}

/// Exhaustive baseline: enumerates every quota-feasible assignment and
/// returns the one minimizing the system completion time. The edge node
/// enters the alphabet only when quotas cannot hold every UE.
pub fn baseline_optimal(scn: &Scenario, quotas: &[usize]) -> Result<MatchingOutcome, MatchError> {
    let n_ues = scn.n_ues();
    let n_sbs = scn.n_sbs();
    let capacity: usize = quotas.iter().sum();
    let mut alphabet: Vec<ServingNode> = (0..n_sbs).map(ServingNode::Sbs).collect();
    if capacity < n_ues {
        alphabet.push(ServingNode::Edge);
    }
    let combos = (alphabet.len() as f64).powi(n_ues as i32);
    if combos > MAX_ENUMERATION {
        return Err(MatchError::TooLarge { combos });
    }

    let mut assignment = vec![0usize; n_ues];
    let mut load = vec![0usize; n_sbs];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut evaluated = 0usize;

    fn recurse(
        scn: &Scenario,
        alphabet: &[ServingNode],
        quotas: &[usize],
        assignment: &mut Vec<usize>,
        load: &mut Vec<usize>,
        depth: usize,
        best: &mut Option<(f64, Vec<usize>)>,
        evaluated: &mut usize,
    ) -> Result<(), MatchError> {
        let n_ues = assignment.len();
        if depth == n_ues {
            *evaluated += 1;
            let serving: Vec<ServingNode> = assignment.iter().map(|&i| alphabet[i]).collect();
            let matching = Matching {
                serving,
                quotas: quotas.to_vec(),
            };
            let state = WorkState::build(scn, &matching, None)?;
            let delay = state.system_round_delay();
            if best.as_ref().map_or(true, |(b, _)| delay < *b) {
                *best = Some((delay, assignment.clone()));
            }
            return Ok(());
        }
        for i in 0..alphabet.len() {
            if let ServingNode::Sbs(s) = alphabet[i] {
                if load[s] >= quotas[s] {
                    continue;
                }
                load[s] += 1;
            }
            assignment[depth] = i;
            recurse(scn, alphabet, quotas, assignment, load, depth + 1, best, evaluated)?;
            if let ServingNode::Sbs(s) = alphabet[i] {
                load[s] -= 1;
            }
        }
        Ok(())
    }

    recurse(
        scn,
        &alphabet,
        quotas,
        &mut assignment,
        &mut load,
        0,
        &mut best,
        &mut evaluated,
    )?;

    let (_, winner) = best.expect("at least one assignment exists");
    let matching = Matching {
        serving: winner.iter().map(|&i| alphabet[i]).collect(),
        quotas: quotas.to_vec(),
    };
    let state = WorkState::build(scn, &matching, None)?;
    let i_g = scn.i_global as f64;
    let total = state.total_round_delay() * i_g;
    let system = state.system_round_delay() * i_g;
    Ok(MatchingOutcome {
        matching,
        allocs: state.allocs,
        stats: MatchingStats {
            swaps_applied: 0,
            proposals_evaluated: evaluated,
            scans: 0,
            wall_time_s: 0.0,
            initial_total_delay_s: total,
            final_total_delay_s: total,
            initial_system_delay_s: system,
            final_system_delay_s: system,
            swap_log: Vec::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::{LearningBudget, UeComputeProfile};
    use crate::radio::{generate_topology, RadioConfig};
    use crate::scenario::{BudgetDraw, ProfileDraw};

    fn scenario(n_ues: usize, n_sbs: usize, seed: u64) -> Scenario {
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
    fn test_initial_association_keeps_best_rsrp_ues() {
        let scn = scenario(3, 1, 11);
        let m = initial_association(&scn, &[2]);
        let mut by_rsrp: Vec<usize> = (0..3).collect();
        by_rsrp.sort_by(|&a, &b| {
            scn.net.rsrp_dbm[[b, 0]]
                .partial_cmp(&scn.net.rsrp_dbm[[a, 0]])
                .unwrap()
        });
        assert_eq!(m.serving[by_rsrp[0]], ServingNode::Sbs(0));
        assert_eq!(m.serving[by_rsrp[1]], ServingNode::Sbs(0));
        assert_eq!(m.serving[by_rsrp[2]], ServingNode::Edge);
        m.validate(3).unwrap();
    }

    #[test]
    fn test_initial_association_feasible_and_deterministic() {
        for seed in [1u64, 2, 3, 4, 5] {
            let scn = scenario(20, 3, seed);
            let quotas = vec![7, 7, 7];
            let a = initial_association(&scn, &quotas);
            let b = initial_association(&scn, &quotas);
            assert_eq!(a.serving, b.serving);
            a.validate(20).unwrap();
            // Capacity 21 >= 20: nobody should overflow to the edge node.
            assert!(a.edge_members().is_empty());
        }
    }

    #[test]
    fn test_run_matching_reaches_stability() {
        for seed in [3u64, 17, 42] {
            let scn = scenario(12, 3, seed);
            let quotas = vec![scn.radio.num_subbands; 3];
            let out = run_matching(&scn, &quotas).unwrap();
            out.matching.validate(12).unwrap();
            let rescan =
                find_swap_blocking_pair(&scn, &out.matching, &out.allocs).unwrap();
            assert!(rescan.is_none(), "seed {seed} left an approvable proposal");
            assert!(out.stats.final_system_delay_s <= out.stats.initial_system_delay_s + 1e-9);
        }
    }

    #[test]
    fn test_swap_log_potential_strictly_decreases() {
        let scn = scenario(15, 3, 7);
        let quotas = vec![scn.radio.num_subbands; 3];
        let out = run_matching(&scn, &quotas).unwrap();
        let mut last_total = out.stats.initial_total_delay_s;
        let mut last_system = out.stats.initial_system_delay_s;
        for entry in &out.stats.swap_log {
            assert!((entry.total_delay_before_s - last_total).abs() < 1e-6);
            assert!((entry.system_delay_before_s - last_system).abs() < 1e-6);
            assert!(entry.system_delay_after_s < entry.system_delay_before_s);
            last_total = entry.total_delay_after_s;
            last_system = entry.system_delay_after_s;
        }
        assert!((last_total - out.stats.final_total_delay_s).abs() < 1e-6);
        assert!((last_system - out.stats.final_system_delay_s).abs() < 1e-6);
    }

    #[test]
    fn test_rerun_from_stable_matching_applies_no_swaps() {
        let scn = scenario(10, 2, 23);
        let quotas = vec![scn.radio.num_subbands; 2];
        let first = run_matching(&scn, &quotas).unwrap();
        let second = run_matching_from(&scn, first.matching.clone()).unwrap();
        assert_eq!(second.stats.swaps_applied, 0);
        assert_eq!(second.matching.serving, first.matching.serving);
    }

    /// Hand-built scenario with identical UEs for utility arithmetic.
    fn identical_ue_scenario(n_ues: usize) -> Scenario {
        let radio = RadioConfig::default().with_even_subbands(1);
        let mut net = generate_topology(&radio, n_ues, 1, 1).unwrap();
        net.channel_gain.fill(1e-9);
        net.rsrp_dbm.fill(-60.0);
        let profiles: Vec<UeComputeProfile> = (0..n_ues)
            .map(|_| UeComputeProfile {
                cycles_per_sample: 1e4,
                data_samples: 200,
                cpu_freq_hz: 1e9,
                cpu_freq_min_hz: 0.5e9,
                cpu_freq_max_hz: 1e9,
                model_bytes: 2e6,
            })
            .collect();
        let budget = LearningBudget {
            global_accuracy: 0.1,
            local_accuracy: 0.5,
            global_iter_scale: 1.0,
            local_iter_scale: vec![1.0; n_ues],
        };
        Scenario::from_parts(radio, net, profiles, budget, None).unwrap()
    }

    #[test]
    fn test_sbs_utility_identical_members() {
        let n = 4;
        let scn = identical_ue_scenario(n);
        let matching = Matching {
            serving: vec![ServingNode::Sbs(0); n],
            quotas: vec![n],
        };
        let state = WorkState::build(&scn, &matching, None).unwrap();
        let allocs = state.allocs.clone();
        let utils = sbs_utility(&scn, &matching, &allocs).unwrap();
        // With identical members the member-sum equals n times the cell's
        // completion time.
        let cell = system_delay_s(&scn, &matching, &allocs).unwrap();
        assert!((utils[0] + n as f64 * cell).abs() < 1e-6 * cell.abs());
    }

    #[test]
    fn test_sbs_utility_empty_cell_is_zero() {
        let scn = scenario(4, 2, 31);
        let matching = Matching {
            serving: vec![ServingNode::Sbs(0); 4],
            quotas: vec![8, 8],
        };
        let state = WorkState::build(&scn, &matching, None).unwrap();
        let utils = sbs_utility(&scn, &matching, &state.allocs).unwrap();
        assert_eq!(utils[1], 0.0);
        assert!(utils[0] < 0.0);
    }

    #[test]
    fn test_ue_utility_on_edge_node() {
        let scn = scenario(3, 1, 13);
        let matching = Matching {
            serving: vec![ServingNode::Sbs(0), ServingNode::Sbs(0), ServingNode::Edge],
            quotas: vec![2],
        };
        let state = WorkState::build(&scn, &matching, None).unwrap();
        let u = ue_utility(&scn, &matching, &state.allocs, 2).unwrap();
        let expected = -(scn.edge_round_delay_s(2) * scn.i_global as f64);
        assert!((u - expected).abs() < 1e-9);
    }

    #[test]
    fn test_baseline_random_feasible_and_seeded() {
        let scn = scenario(25, 3, 3);
        let quotas = vec![10, 10, 10];
        let a = baseline_random(&scn, &quotas, 9);
        let b = baseline_random(&scn, &quotas, 9);
        let c = baseline_random(&scn, &quotas, 10);
        assert_eq!(a.serving, b.serving);
        assert_ne!(a.serving, c.serving);
        a.validate(25).unwrap();
        assert!(a.edge_members().is_empty());
    }

    #[test]
    fn test_baseline_random_overflow_goes_to_edge() {
        let scn = scenario(6, 2, 3);
        let m = baseline_random(&scn, &[2, 2], 1);
        m.validate(6).unwrap();
        assert_eq!(m.edge_members().len(), 2);
    }

    #[test]
    fn test_baseline_uniform_splits_evenly() {
        let scn = scenario(9, 3, 19);
        let m = initial_association(&scn, &[3, 3, 3]);
        let allocs = baseline_uniform_alloc(&scn, &m);
        for s in 0..3 {
            let members = m.members(s);
            if members.is_empty() {
                assert!(allocs[s].is_none());
                continue;
            }
            let alloc = allocs[s].as_ref().unwrap();
            for &b in &alloc.beta {
                assert!((b - 1.0 / members.len() as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn test_one_sided_stable_under_frozen_preferences() {
        let scn = scenario(12, 3, 29);
        let quotas = vec![4, 4, 4];
        let m = baseline_one_sided(&scn, &quotas);
        m.validate(12).unwrap();
        // Classic stability: no UE strictly prefers an SBS that would
        // strictly prefer it over a current member (or has a free slot).
        let prefs = build_preferences(&scn, PreferenceBasis::Rsrp);
        for n in 0..12 {
            let current_rank = |n: usize| -> usize {
                match m.serving[n] {
                    ServingNode::Sbs(s) => {
                        prefs.ue_prefs[n].iter().position(|&x| x == s).unwrap()
                    }
                    ServingNode::Edge => usize::MAX,
                }
            };
            for (rank, &s) in prefs.ue_prefs[n].iter().enumerate() {
                if rank >= current_rank(n) {
                    break;
                }
                let members = m.members(s);
                if members.len() < quotas[s] {
                    panic!("ue {n} prefers sbs {s} which has a free slot");
                }
                let n_key = (full_share_delay(&scn, n, s), n);
                for &w in &members {
                    let w_key = (full_share_delay(&scn, w, s), w);
                    assert!(
                        n_key >= w_key,
                        "ue {n} and sbs {s} form a classic blocking pair"
                    );
                }
            }
        }
    }

    #[test]
    fn test_baseline_optimal_beats_or_matches_proposal() {
        for seed in [5u64, 9] {
            let scn = scenario(6, 2, seed);
            let quotas = vec![scn.radio.num_subbands; 2];
            let opt = baseline_optimal(&scn, &quotas).unwrap();
            let prop = run_matching(&scn, &quotas).unwrap();
            assert!(
                opt.stats.final_system_delay_s
                    <= prop.stats.final_system_delay_s * (1.0 + 1e-9)
            );
        }
    }

    #[test]
    fn test_baseline_optimal_guard() {
        let scn = scenario(30, 3, 3);
        let quotas = vec![15, 15, 15];
        match baseline_optimal(&scn, &quotas) {
            Err(MatchError::TooLarge { .. }) => {}
            other => panic!("expected TooLarge, got {other:?}"),
        }
    }

    #[test]
    fn test_quota_validation() {
        let m = Matching {
            serving: vec![ServingNode::Sbs(0); 3],
            quotas: vec![2],
        };
        assert!(matches!(
            m.validate(3),
            Err(MatchError::QuotaExceeded { sbs: 0 })
        ));
        assert!(matches!(m.validate(4), Err(MatchError::UnassignedUe(_))));
    }

    #[test]
    fn test_preferences_sorted_by_basis() {
        let scn = scenario(6, 3, 37);
        let rsrp = build_preferences(&scn, PreferenceBasis::Rsrp);
        for n in 0..6 {
            for w in rsrp.ue_prefs[n].windows(2) {
                assert!(scn.net.rsrp_dbm[[n, w[0]]] >= scn.net.rsrp_dbm[[n, w[1]]]);
            }
        }
        let lat = build_preferences(&scn, PreferenceBasis::Latency);
        for n in 0..6 {
            for w in lat.ue_prefs[n].windows(2) {
                assert!(full_share_delay(&scn, n, w[0]) <= full_share_delay(&scn, n, w[1]));
            }
        }
        for s in 0..3 {
            for w in lat.sbs_prefs[s].windows(2) {
                assert!(full_share_delay(&scn, w[0], s) <= full_share_delay(&scn, w[1], s));
            }
        }
    }
}
