//! Iteration counts and computation/communication delay accounting.
//!
//! A training run consists of global rounds; within each round every UE
//! performs local iterations. Both counts follow accuracy-budget formulas
//! and are always rounded up to whole iterations. Delays are kept in
//! seconds internally; output layers convert to milliseconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::{rate_general, RadioConfig, SinrTable};
use crate::types::{Association, ServingNode};

/// Errors from delay accounting.
#[derive(Debug, Error, PartialEq)]
pub enum LatencyError {
    /// An accuracy parameter sits outside the open interval (0, 1).
    #[error("accuracy parameter out of (0, 1): {0}")]
    BadAccuracy(String),
    /// A communication delay was requested at a non-positive rate.
    #[error("non-positive uplink rate for ue {0}")]
    ZeroRate(usize),
    /// A per-cell delay was requested for a cell with no members.
    #[error("sbs {0} has no members")]
    EmptySbs(usize),
}

/// Accuracy targets and iteration-scale constants for one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearningBudget {
    /// Target global accuracy, in (0, 1); smaller means more global rounds.
    pub global_accuracy: f64,
    /// Target local accuracy, in (0, 1); smaller means more local iterations.
    pub local_accuracy: f64,
    /// Task-wide scale on the global iteration count.
    pub global_iter_scale: f64,
    /// Per-UE scale on the local iteration count.
    pub local_iter_scale: Vec<f64>,
}

impl LearningBudget {
    fn check(&self) -> Result<(), LatencyError> {
        for (name, v) in [
            ("global", self.global_accuracy),
            ("local", self.local_accuracy),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(LatencyError::BadAccuracy(format!("{name} accuracy {v}")));
            }
        }
        if !(self.global_iter_scale > 0.0) {
            return Err(LatencyError::BadAccuracy(format!(
                "global iteration scale {}",
                self.global_iter_scale
            )));
        }
        if let Some(nu) = self.local_iter_scale.iter().find(|nu| !(**nu > 0.0)) {
            return Err(LatencyError::BadAccuracy(format!(
                "local iteration scale {nu}"
            )));
        }
        Ok(())
    }
}

/// Static compute-side parameters of one UE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UeComputeProfile {
    /// CPU cycles needed per training sample.
    pub cycles_per_sample: f64,
    /// Local training-set size in samples.
    pub data_samples: u64,
    /// Operating CPU frequency in Hz.
    pub cpu_freq_hz: f64,
    /// Lowest admissible CPU frequency in Hz.
    pub cpu_freq_min_hz: f64,
    /// Highest admissible CPU frequency in Hz.
    pub cpu_freq_max_hz: f64,
    /// Size of the model update in bytes.
    pub model_bytes: f64,
}

impl UeComputeProfile {
    /// Checks the frequency window and positivity invariants.
    pub fn validate(&self) -> bool {
        self.cycles_per_sample > 0.0
            && self.cpu_freq_min_hz > 0.0
            && self.cpu_freq_min_hz <= self.cpu_freq_hz
            && self.cpu_freq_hz <= self.cpu_freq_max_hz
            && self.model_bytes > 0.0
    }
}

/// Per-UE and per-cell delays for one association, in seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelayReport {
    /// Computation time per UE for one global round.
    pub per_ue_comp_s: Vec<f64>,
    /// Upload time per UE for one global round.
    pub per_ue_com_s: Vec<f64>,
    /// Completion time per SBS across all global rounds; 0 for empty cells.
    pub per_sbs_global_s: Vec<f64>,
    /// Completion time of the slowest UE across all global rounds.
    pub system_global_s: f64,
}

/// Rounds a positive real iteration requirement up to a whole count.
///
/// The 1e-9 back-off keeps formulas that are exactly integral in real
/// arithmetic (for example a requirement of exactly 1.0) from being pushed
/// to the next integer by float representation error.
fn ceil_count(x: f64) -> u64 {
    (x - 1e-9).ceil().max(1.0) as u64
}

/// Number of global rounds needed for the accuracy budget.
pub fn iters_global(budget: &LearningBudget) -> Result<u64, LatencyError> {
    budget.check()?;
    let need = budget.global_iter_scale * (1.0 / budget.global_accuracy).ln()
        / (1.0 - budget.local_accuracy);
    Ok(ceil_count(need))
}

/// Number of local iterations UE `ue` needs per global round.
pub fn iters_local(budget: &LearningBudget, ue: usize) -> Result<u64, LatencyError> {
    budget.check()?;
    let need = budget.local_iter_scale[ue] * (1.0 / budget.local_accuracy).ln();
    Ok(ceil_count(need))
}

/// Computation time in seconds for one global round of UE `ue`.
pub fn t_comp(
    profile: &UeComputeProfile,
    budget: &LearningBudget,
    ue: usize,
) -> Result<f64, LatencyError> {
    let local_iters = iters_local(budget, ue)? as f64;
    Ok(local_iters * profile.cycles_per_sample * profile.data_samples as f64 / profile.cpu_freq_hz)
}

/// Upload time in seconds for a model of `model_bytes` at `rate_bps`.
pub fn t_com(ue: usize, model_bytes: f64, rate_bps: f64) -> Result<f64, LatencyError> {
    if !(rate_bps > 0.0) || !rate_bps.is_finite() {
        return Err(LatencyError::ZeroRate(ue));
    }
    Ok(8.0 * model_bytes / rate_bps)
}

/// Completion time of one cell across all global rounds: the slowest member
/// bounds each round, and rounds run back to back.
pub fn global_delay_sbs(
    sbs: usize,
    members: &[usize],
    per_ue_comp_s: &[f64],
    per_ue_com_s: &[f64],
    i_global: u64,
) -> Result<f64, LatencyError> {
    if members.is_empty() {
        return Err(LatencyError::EmptySbs(sbs));
    }
    let worst = members
        .iter()
        .map(|&n| per_ue_com_s[n] + per_ue_comp_s[n])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(i_global as f64 * worst)
}

/// Computes the full delay report for an association.
///
/// Upload rates follow the association's bandwidth fractions; edge-served
/// UEs upload at the reserved `edge_rate_bps`.
pub fn global_delay_system(
    assoc: &Association,
    sinr: &SinrTable,
    radio_cfg: &RadioConfig,
    profiles: &[UeComputeProfile],
    budget: &LearningBudget,
    edge_rate_bps: f64,
) -> Result<DelayReport, LatencyError> {
    let n_ues = assoc.n_ues();
    let n_sbs = radio_cfg.subbands_per_sbs.len();
    let i_global = iters_global(budget)?;

    let mut per_ue_comp_s = Vec::with_capacity(n_ues);
    let mut per_ue_com_s = Vec::with_capacity(n_ues);
    for n in 0..n_ues {
        let mut profile = profiles[n].clone();
        profile.cpu_freq_hz = assoc.cpu_freq_hz[n];
        per_ue_comp_s.push(t_comp(&profile, budget, n)?);
        let rate = match assoc.serving[n] {
            ServingNode::Sbs(s) => rate_general(n, &[s], &[assoc.beta[n]], sinr, radio_cfg)
                .map_err(|_| LatencyError::ZeroRate(n))?,
            ServingNode::Edge => edge_rate_bps,
        };
        per_ue_com_s.push(t_com(n, profiles[n].model_bytes, rate)?);
    }

    let mut per_sbs_global_s = vec![0.0; n_sbs];
    for (s, slot) in per_sbs_global_s.iter_mut().enumerate() {
        let members = assoc.members(s);
        if !members.is_empty() {
            *slot = global_delay_sbs(s, &members, &per_ue_comp_s, &per_ue_com_s, i_global)?;
        }
    }

    let system_global_s = (0..n_ues)
        .map(|n| i_global as f64 * (per_ue_com_s[n] + per_ue_comp_s[n]))
        .fold(0.0, f64::max);

    Ok(DelayReport {
        per_ue_comp_s,
        per_ue_com_s,
        per_sbs_global_s,
        system_global_s,
    })
}
