//! Shared oracles for integration tests: independent, brute-force style
//! implementations that the fast production code is checked against.

#![allow(dead_code)]

use edgedem_core::alloc::AllocProblem;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Exact min-max optimum over the fraction grid {1/units, 2/units, ...}.
///
/// Marginal allocation: start every member at one grid unit and repeatedly
/// hand one unit to the current bottleneck. For per-member delays that are
/// strictly decreasing in the member's own fraction this is exact on the
/// grid: when a member received its last unit it was the bottleneck, and
/// the running maximum never increases, so any allocation beating the
/// result would need at least one more unit than the budget holds.
pub fn alloc_grid_oracle(p: &AllocProblem, units: usize) -> (Vec<f64>, f64) {
    let n = p.ue_ids.len();
    assert!(n >= 1 && units >= n);
    let mut held = vec![1usize; n];
    let mut left = units - n;
    while left > 0 {
        let mut arg = 0;
        let mut worst = f64::NEG_INFINITY;
        for i in 0..n {
            let d = p.member_delay(i, held[i] as f64 / units as f64);
            if d > worst {
                worst = d;
                arg = i;
            }
        }
        if held[arg] >= units {
            break;
        }
        held[arg] += 1;
        left -= 1;
    }
    let beta: Vec<f64> = held.iter().map(|u| *u as f64 / units as f64).collect();
    let objective = p.objective(&beta);
    (beta, objective)
}

/// Full enumeration of the fraction grid for up to three members; validates
/// the marginal-allocation oracle.
pub fn alloc_grid_brute_force(p: &AllocProblem, units: usize) -> f64 {
    let n = p.ue_ids.len();
    let scale = |u: usize| u as f64 / units as f64;
    let mut best = f64::INFINITY;
    match n {
        1 => best = p.objective(&[1.0]),
        2 => {
            for a in 1..units {
                let beta = [scale(a), scale(units - a)];
                best = best.min(p.objective(&beta));
            }
        }
        3 => {
            for a in 1..units - 1 {
                for b in 1..units - a {
                    let beta = [scale(a), scale(b), scale(units - a - b)];
                    best = best.min(p.objective(&beta));
                }
            }
        }
        _ => panic!("brute force supports up to 3 members"),
    }
    best
}

/// Random cell instance for solver-versus-grid comparisons.
///
/// Computation dominates communication and computation times sit in a
/// narrow band, which keeps every optimal fraction near 1/n. That bounds
/// the grid's discretization error well under the comparison tolerance,
/// so a disagreement beyond it indicts the solver rather than the grid.
pub fn oracle_friendly_problem(rng: &mut ChaCha8Rng, n: usize) -> AllocProblem {
    let mut com_bits = Vec::with_capacity(n);
    let mut rate_coeff = Vec::with_capacity(n);
    let mut comp_s = Vec::with_capacity(n);
    for _ in 0..n {
        let rate: f64 = rng.random_range(2e6..6e6);
        let com_at_even_split: f64 = rng.random_range(0.5..0.7);
        com_bits.push(rate * com_at_even_split / n as f64);
        rate_coeff.push(rate);
        comp_s.push(rng.random_range(3.0..3.05));
    }
    AllocProblem {
        ue_ids: (0..n).collect(),
        com_bits,
        rate_coeff,
        comp_s,
        cpu_freq_hz: vec![2e9; n],
    }
}

/// Ranks with ties averaged, 1-based.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with its one-sided p-value for a negative
/// trend, from the t approximation on n - 2 degrees of freedom.
pub fn spearman_negative(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let n = xs.len();
    assert!(n >= 4 && n == ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let rho = sxy / (sxx * syy).sqrt();
    let df = (n - 2) as f64;
    let clamped = rho.clamp(-0.999999, 0.999999);
    let t = clamped * (df / (1.0 - clamped * clamped)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    (rho, dist.cdf(t))
}
