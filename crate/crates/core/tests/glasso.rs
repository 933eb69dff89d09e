mod common;

use common::*;
use nalgebra::DMatrix;
use npn_quilt::glasso::{duality_gap, kkt_residual, solve, solve_with_report, PenaltyMatrix, SolverOptions};
use npn_quilt::types::{EdgeSet, PairMask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask<R: Rng>(rng: &mut R, p: usize, hidden: f64) -> (PairMask, EdgeSet) {
    // hide a random set of pairs between two random halves so the observed
    // pattern stays completable
    let left: Vec<bool> = (0..p).map(|_| rng.random::<bool>()).collect();
    let mut rows = vec![true; p * p];
    let mut zero = EdgeSet::new(p);
    for i in 0..p {
        for j in (i + 1)..p {
            if left[i] != left[j] && rng.random::<f64>() < hidden {
                rows[i * p + j] = false;
                rows[j * p + i] = false;
                zero.insert(i, j).unwrap();
            }
        }
    }
    (PairMask::from_rows(p, rows).unwrap(), zero)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unpenalized_solve_inverts(seed in any::<u64>(), p in 2usize..=50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = random_spd(&mut rng, p, 0.2);
        let est = solve(&sigma, &PenaltyMatrix::uniform(p, 0.0).unwrap(), &SolverOptions::default()).unwrap();
        let resid = est.theta() * &sigma - DMatrix::identity(p, p);
        prop_assert!(max_abs(&resid) <= 1e-5, "residual {}", max_abs(&resid));
    }

    #[test]
    fn penalized_solutions_satisfy_kkt(seed in any::<u64>(), p in 2usize..=30, lambda in 0.0..0.4f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = to_correlation(&random_spd(&mut rng, p, 0.3));
        let pen = PenaltyMatrix::uniform(p, lambda).unwrap();
        let (est, report) = solve_with_report(&sigma, &pen, &SolverOptions::default()).unwrap();
        let kkt = kkt_residual(&sigma, &pen, &est, None).unwrap();
        prop_assert!(kkt <= 1e-5, "kkt {kkt}");
        prop_assert!(report.duality_gap.abs() <= 1e-4, "gap {}", report.duality_gap);
    }

    #[test]
    fn constrained_solutions_satisfy_kkt_with_exact_zeros(seed in any::<u64>(), p in 3usize..=25, lambda in 0.0..0.3f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let full = to_correlation(&random_spd(&mut rng, p, 0.5));
        let (mask, zero) = random_mask(&mut rng, p, 0.7);
        let mut sigma = full.clone();
        for (i, j) in zero.iter() {
            sigma[(i, j)] = 0.0;
            sigma[(j, i)] = 0.0;
        }
        let pen = PenaltyMatrix::uniform(p, lambda).unwrap();
        let opts = SolverOptions::default().with_zero_constraint(zero.clone());
        let est = solve(&sigma, &pen, &opts).unwrap();
        for (i, j) in zero.iter() {
            prop_assert_eq!(est.theta()[(i, j)], 0.0);
        }
        let kkt = kkt_residual(&sigma, &pen, &est, Some(&zero)).unwrap();
        prop_assert!(kkt <= 1e-5, "kkt {kkt}");
        prop_assert!(mask.observed_count() > 0);
    }

    #[test]
    fn constrained_unpenalized_solve_matches_newton_oracle(seed in any::<u64>(), p in 3usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let full = to_correlation(&random_spd(&mut rng, p, 0.5));
        let (mask, zero) = random_mask(&mut rng, p, 0.6);
        let opts = SolverOptions { tolerance: 1e-10, max_iterations: 100_000, ..SolverOptions::default() }
            .with_zero_constraint(zero);
        let mut sigma = full.clone();
        for (i, j) in mask.unobserved_pairs() {
            sigma[(i, j)] = 0.0;
            sigma[(j, i)] = 0.0;
        }
        let est = solve(&sigma, &PenaltyMatrix::uniform(p, 0.0).unwrap(), &opts).unwrap();
        let oracle = maxdet_newton(&full, &mask);
        prop_assert!(max_abs(&(est.theta() - &oracle)) <= 1e-6, "diff {}", max_abs(&(est.theta() - &oracle)));
    }

    #[test]
    fn solution_is_permutation_equivariant(seed in any::<u64>(), p in 2usize..=15, lambda in 0.01..0.3f64) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = to_correlation(&random_spd(&mut rng, p, 0.3));
        let mut perm: Vec<usize> = (0..p).collect();
        perm.shuffle(&mut rng);
        let permuted = DMatrix::from_fn(p, p, |a, b| sigma[(perm[a], perm[b])]);
        let pen = PenaltyMatrix::uniform(p, lambda).unwrap();
        let opts = SolverOptions::default().with_tolerance(1e-9);
        let a = solve(&sigma, &pen, &opts).unwrap();
        let b = solve(&permuted, &pen, &opts).unwrap();
        let back = DMatrix::from_fn(p, p, |x, y| a.theta()[(perm[x], perm[y])]);
        prop_assert!(max_abs(&(back - b.theta())) <= 1e-6);
    }

    #[test]
    fn dual_objective_never_decreases(seed in any::<u64>(), p in 3usize..=20, lambda in 0.01..0.3f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = to_correlation(&random_spd(&mut rng, p, 0.3));
        let opts = SolverOptions { record_trace: true, ..SolverOptions::default() };
        let (_, report) = solve_with_report(&sigma, &PenaltyMatrix::uniform(p, lambda).unwrap(), &opts).unwrap();
        for w in report.dual_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "{} then {}", w[0], w[1]);
        }
    }
}

#[test]
fn penalty_above_every_correlation_gives_diagonal_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sigma = to_correlation(&random_spd(&mut rng, 10, 0.3));
    let top = (0..10)
        .flat_map(|i| (0..10).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| sigma[(i, j)].abs())
        .fold(0.0, f64::max);
    let pen = PenaltyMatrix::uniform(10, top * 1.01).unwrap();
    let est = solve(&sigma, &pen, &SolverOptions::default()).unwrap();
    assert!(est.support().is_empty());
    assert!(duality_gap(&sigma, &pen, est.theta()).abs() < 1e-12);
}

#[test]
fn strongly_correlated_masked_input_still_converges() {
    // equicorrelated block with a hidden cross pattern; the masked matrix is
    // indefinite so the solver cannot start from it
    let p = 12;
    let mut sigma = DMatrix::from_element(p, p, 0.9);
    sigma.fill_diagonal(1.0);
    let mut zero = EdgeSet::new(p);
    for i in 0..4 {
        for j in 8..12 {
            sigma[(i, j)] = 0.0;
            sigma[(j, i)] = 0.0;
            zero.insert(i, j).unwrap();
        }
    }
    assert!(sigma.clone().cholesky().is_none());
    let pen = PenaltyMatrix::uniform(p, 0.05).unwrap();
    let est = solve(&sigma, &pen, &SolverOptions::default().with_zero_constraint(zero.clone())).unwrap();
    assert!(kkt_residual(&sigma, &pen, &est, Some(&zero)).unwrap() <= 1e-5);
}
