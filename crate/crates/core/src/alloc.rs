//! Min-max bandwidth allocation inside one cell.
//!
//! Each member UE of a cell splits the cell's subband share: UE `n` gets
//! fraction `beta_n` and finishes one round after
//! `comp_n + com_bits_n / (beta_n * rate_coeff_n)` seconds. The solver
//! minimizes the slowest member's delay subject to the fractions summing
//! to one. CPU frequencies decouple: computation time only shrinks as the
//! frequency grows, so every UE runs at its maximum.
//!
//! The solver bisects on the achievable delay `T`: for a candidate `T` the
//! cheapest feasible fraction of each UE has the closed form
//! `beta_n(T) = com_bits_n / (rate_coeff_n * (T - comp_n))`, and `T` is
//! feasible exactly when those fractions sum to at most one. At the optimum
//! the budget is tight and all non-capped delays are equal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::UeComputeProfile;

/// Default absolute tolerance on the objective, in seconds.
pub const DEFAULT_TOL_S: f64 = 1e-6;

/// Hard cap on bisection steps before giving up.
const MAX_BISECTION_STEPS: u32 = 200;

/// Errors from the per-cell allocation solver.
#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    /// The cell has no members to allocate for.
    #[error("allocation problem has no UEs")]
    EmptyProblem,
    /// The bisection failed to bracket the optimum within the step cap.
    #[error("bisection did not converge within {0} steps")]
    NonConvergence(u32),
    /// A member cannot communicate at all (zero subband share or rate).
    #[error("ue {0} has no usable rate in this cell")]
    InfeasibleQuota(usize),
    /// An input value is non-finite or non-positive where it must not be.
    #[error("invalid allocation input: {0}")]
    InvalidInput(String),
}

/// One cell's allocation problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocProblem {
    /// Global UE indices of the cell members.
    pub ue_ids: Vec<usize>,
    /// Upload size per member in bits.
    pub com_bits: Vec<f64>,
    /// Full-share upload rate per member in bit/s (the rate at beta = 1).
    pub rate_coeff: Vec<f64>,
    /// Computation time per member in seconds.
    pub comp_s: Vec<f64>,
    /// CPU frequency per member in Hz, carried through to the solution.
    pub cpu_freq_hz: Vec<f64>,
}

impl AllocProblem {
    fn len(&self) -> usize {
        self.ue_ids.len()
    }

    fn validate(&self) -> Result<(), AllocError> {
        if self.len() == 0 {
            return Err(AllocError::EmptyProblem);
        }
        let consistent = [
            self.com_bits.len(),
            self.rate_coeff.len(),
            self.comp_s.len(),
            self.cpu_freq_hz.len(),
        ]
        .iter()
        .all(|l| *l == self.len());
        if !consistent {
            return Err(AllocError::InvalidInput("field lengths differ".into()));
        }
        for i in 0..self.len() {
            if !(self.com_bits[i] > 0.0) || !self.com_bits[i].is_finite() {
                return Err(AllocError::InvalidInput(format!(
                    "ue {} upload size {}",
                    self.ue_ids[i], self.com_bits[i]
                )));
            }
            if !(self.rate_coeff[i] > 0.0) || !self.rate_coeff[i].is_finite() {
                return Err(AllocError::InfeasibleQuota(self.ue_ids[i]));
            }
            if !(self.comp_s[i] >= 0.0) || !self.comp_s[i].is_finite() {
                return Err(AllocError::InvalidInput(format!(
                    "ue {} computation time {}",
                    self.ue_ids[i], self.comp_s[i]
                )));
            }
        }
        Ok(())
    }

    /// Delay of member `i` under fraction `beta`.
    pub fn member_delay(&self, i: usize, beta: f64) -> f64 {
        self.comp_s[i] + self.com_bits[i] / (beta * self.rate_coeff[i])
    }

    /// Slowest member delay under a full fraction vector.
    pub fn objective(&self, beta: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| self.member_delay(i, beta[i]))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A solved allocation: fractions, frequencies, and the achieved delay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocSolution {
    /// Bandwidth fraction per member, in (0, 1], summing to 1.
    pub beta: Vec<f64>,
    /// CPU frequency per member in Hz.
    pub cpu_freq_hz: Vec<f64>,
    /// Slowest member delay in seconds.
    pub objective_s: f64,
    /// Bisection steps taken.
    pub iterations: u32,
}

/// Picks each UE's CPU frequency: computation time is decreasing in the
/// frequency and couples with nothing else, so the maximum is optimal.
pub fn optimal_freq(profiles: &[UeComputeProfile]) -> Vec<f64> {
    profiles.iter().map(|p| p.cpu_freq_max_hz).collect()
}

/// Required fraction of member `i` to finish by deadline `t`.
fn required_beta(problem: &AllocProblem, i: usize, t: f64) -> f64 {
    problem.com_bits[i] / (problem.rate_coeff[i] * (t - problem.comp_s[i]))
}

fn required_sum(problem: &AllocProblem, t: f64) -> f64 {
    (0..problem.len()).map(|i| required_beta(problem, i, t)).sum()
}

/// Solves the min-max fraction split for one cell.
pub fn solve_beta(problem: &AllocProblem, tol_s: f64) -> Result<AllocSolution, AllocError> {
    problem.validate()?;
    if !(tol_s > 0.0) {
        return Err(AllocError::InvalidInput(format!("tolerance {tol_s}")));
    }
    let n = problem.len();

    // Bracket: below the largest computation time nothing is feasible; at
    // the even-split delay everything is.
    let lo0 = problem.comp_s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let hi0 = (0..n)
        .map(|i| problem.comp_s[i] + n as f64 * problem.com_bits[i] / problem.rate_coeff[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);

    // Bisect well below the verification tolerance so the returned fractions
    // equalize delays to within a small slice of `tol_s`.
    let target = (tol_s * 1e-6).max(4.0 * f64::EPSILON * hi0);
    let mut iterations = 0;
    while hi - lo > target && iterations < MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if required_sum(problem, mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    if !(hi - lo <= tol_s.max(8.0 * f64::EPSILON * hi0)) {
        return Err(AllocError::NonConvergence(iterations));
    }

    // `hi` is feasible, so every required fraction is at most 1 and their
    // sum is at most 1. Scaling up to an exact unit sum only speeds members
    // up; the clamp guards the single-member float edge.
    let raw: Vec<f64> = (0..n).map(|i| required_beta(problem, i, hi)).collect();
    let total: f64 = raw.iter().sum();
    let beta: Vec<f64> = raw.iter().map(|b| (b / total).min(1.0)).collect();

    Ok(AllocSolution {
        objective_s: problem.objective(&beta),
        cpu_freq_hz: problem.cpu_freq_hz.clone(),
        beta,
        iterations,
    })
}

/// Checks the optimality structure of a solution: the fraction budget is
/// tight and every member that is not capped at a full share finishes at
/// the common objective delay.
pub fn verify_kkt(problem: &AllocProblem, solution: &AllocSolution, tol_s: f64) -> bool {
    if problem.validate().is_err() || solution.beta.len() != problem.len() {
        return false;
    }
    let total: f64 = solution.beta.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return false;
    }
    for (i, &beta) in solution.beta.iter().enumerate() {
        if !(beta > 0.0 && beta <= 1.0 + 1e-9) {
            return false;
        }
        let capped = beta >= 1.0 - 1e-9;
        let delay = problem.member_delay(i, beta);
        if !capped && (delay - solution.objective_s).abs() > tol_s {
            return false;
        }
    }
    true
}
