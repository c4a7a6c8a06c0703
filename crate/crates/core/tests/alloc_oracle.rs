//! Cross-checks the bisection allocator against independent grid oracles.

mod common;

use common::{alloc_grid_brute_force, alloc_grid_oracle, oracle_friendly_problem};
use edgedem_core::alloc::{solve_beta, verify_kkt, AllocProblem, DEFAULT_TOL_S};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The marginal-allocation oracle must agree with full grid enumeration
/// wherever enumeration is tractable.
#[test]
fn test_grid_oracle_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 1..=3 {
        for _ in 0..20 {
            let p = oracle_friendly_problem(&mut rng, n);
            let (_, greedy) = alloc_grid_oracle(&p, 200);
            let brute = alloc_grid_brute_force(&p, 200);
            assert!(
                (greedy - brute).abs() < 1e-12,
                "marginal allocation {greedy} vs enumeration {brute} at n={n}"
            );
        }
    }
}

/// Also check on harsher instances than the solver-comparison draw uses.
#[test]
fn test_grid_oracle_matches_brute_force_heterogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let n = rng.random_range(2..=3);
        let bits: Vec<f64> = (0..n).map(|_| rng.random_range(8e6..6.4e7)).collect();
        let rate: Vec<f64> = (0..n).map(|_| rng.random_range(1e6..8e6)).collect();
        let comp: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
        let p = AllocProblem {
            ue_ids: (0..n).collect(),
            com_bits: bits,
            rate_coeff: rate,
            comp_s: comp,
            cpu_freq_hz: vec![2e9; n],
        };
        let (_, greedy) = alloc_grid_oracle(&p, 150);
        let brute = alloc_grid_brute_force(&p, 150);
        assert!((greedy - brute).abs() < 1e-12);
    }
}

/// The continuous solver must land within the grid resolution of the grid
/// optimum, from below.
#[test]
fn test_solver_agrees_with_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed_round in 0..25 {
        for n in 1..=5 {
            let p = oracle_friendly_problem(&mut rng, n);
            let sol = solve_beta(&p, DEFAULT_TOL_S)
                .unwrap_or_else(|e| panic!("round {seed_round} n={n}: {e}"));
            assert!(verify_kkt(&p, &sol, DEFAULT_TOL_S));
            let (_, grid_obj) = alloc_grid_oracle(&p, 1000);
            let rel = (sol.objective_s - grid_obj).abs() / grid_obj;
            assert!(
                rel <= 1e-3,
                "solver {} vs grid {} (rel {rel:.2e}) at n={n}",
                sol.objective_s,
                grid_obj
            );
            // The grid is a feasible point, so the exact optimum must not
            // exceed it by more than float noise.
            assert!(sol.objective_s <= grid_obj + 1e-9 * grid_obj);
        }
    }
}
