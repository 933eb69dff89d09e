//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failures are printed, not fatal, unless `ACCEPTANCE_STRICT=1` is set.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::DMatrix;
use npn_quilt::eval::{run_sweep, BenchmarkOptions, Method, Scenario, SweepResult};
use npn_quilt::glasso::{kkt_residual, solve, solve_with_report, PenaltyMatrix, SolverOptions, POPULATION_TOLERANCE};
use npn_quilt::lrgq::{bsvd_factor, FloorEstimator};
use npn_quilt::madgq::{check_assumptions, fit_madgq, population_diagnostics, schur_complement, MadgqThresholds, POPULATION_ZERO};
use npn_quilt::rank_corr::{estimate_correlation, kendall_tau, spearman_block, CorrelationOptions};
use npn_quilt::simgen::{
    assign_blocks, generate_model, sample_blocks, GraphSpec, Marginal, ModelSpec, SamplingMode, ScenarioConfig,
    SpikedSpec,
};
use npn_quilt::types::{BlockDesign, EdgeSet, MaskedCorrelation};
use npn_quilt::Statistic;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPEARMAN_TOL: f64 = 1e-12;
const RANK_RUNTIME: Duration = Duration::from_secs(10);
const INVERSION_TOL: f64 = 1e-5;
const KKT_TOL: f64 = 1e-5;
const SCHUR_TOL: f64 = 1e-8;
const THRESHOLD_MARGIN: f64 = 1e-6;
const MIN_RECOVERY_INSTANCES: usize = 20;
const BSVD_TOL: f64 = 1e-6;
const RATIO_RANGE: (f64, f64) = (0.4, 0.65);
const MIN_MAD_TPR: f64 = 0.7;
const SCENARIO_RUNTIME: Duration = Duration::from_secs(30 * 60);
const TREND_SLACK: f64 = 0.03;
const SWEEP_REPLICATES: usize = 20;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn criterion(id: u32, name: &str, check: impl FnOnce() -> Verdict) -> bool {
    let started = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    println!(
        "[{}] {id:>2} {name}: {} ({:.1} s)",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        started.elapsed().as_secs_f64()
    );
    v.pass
}

fn masked_of(sigma: &DMatrix<f64>, design: &BlockDesign) -> MaskedCorrelation {
    let mask = design.pair_mask();
    let mut values = sigma.clone();
    for (i, j) in mask.unobserved_pairs() {
        values[(i, j)] = 0.0;
        values[(j, i)] = 0.0;
    }
    MaskedCorrelation::new(values, mask).unwrap()
}

fn nonconstant(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> Vec<f64> {
    loop {
        let v = random_vector(rng, n, ties);
        if v.iter().any(|&a| a != v[0]) {
            return v;
        }
    }
}

fn rank_statistics() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut kendall_mismatch = 0;
    let mut spearman_worst = 0.0_f64;
    for k in 0..200 {
        let n = rng.random_range(3..=500);
        let ties = k % 2 == 0;
        let x = nonconstant(&mut rng, n, ties);
        let y = nonconstant(&mut rng, n, ties);
        if kendall_tau(&x, &y).unwrap() != kendall_naive(&x, &y) {
            kendall_mismatch += 1;
        }
        let data = DMatrix::from_fn(n, 2, |i, j| if j == 0 { x[i] } else { y[i] });
        let rho = spearman_block(&data).unwrap()[(0, 1)];
        spearman_worst = spearman_worst.max((rho - spearman_naive(&x, &y)).abs());
    }
    let elapsed = started.elapsed();
    verdict(
        kendall_mismatch == 0 && spearman_worst <= SPEARMAN_TOL && elapsed < RANK_RUNTIME,
        format!(
            "200 vectors, n <= 500; kendall mismatches {kendall_mismatch}; spearman max diff {spearman_worst:.1e} (tol {SPEARMAN_TOL:.0e}); {:.2} s (limit {} s)",
            elapsed.as_secs_f64(),
            RANK_RUNTIME.as_secs()
        ),
    )
}

fn increasing(kind: usize, a: f64, x: f64) -> f64 {
    match kind {
        0 => (a * x).exp(),
        1 => x.powi(3) + a * x,
        2 => (x * a).atan() * 7.0 - 1.0,
        3 => a * x + 11.0,
        _ => (x / a).sinh(),
    }
}

fn monotone_invariance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut changed = 0;
    for _ in 0..50 {
        let p: usize = rng.random_range(8..=20);
        let k = rng.random_range(2..=3);
        let o = (p + k - 1).div_ceil(k) + rng.random_range(1..=3);
        let n = rng.random_range(30..=200);
        let design = assign_blocks(p, k, o.min(p), n, &mut rng).unwrap();
        let blocks: Vec<DMatrix<f64>> = design
            .blocks()
            .iter()
            .map(|b| DMatrix::from_fn(n, b.len(), |_, _| (standard_normal(&mut rng) * 8.0).round() / 8.0))
            .collect();
        let maps: Vec<(usize, f64)> = (0..p).map(|_| (rng.random_range(0..5), rng.random_range(0.5..2.0))).collect();
        let transformed: Vec<DMatrix<f64>> = design
            .blocks()
            .iter()
            .zip(&blocks)
            .map(|(b, x)| DMatrix::from_fn(n, b.len(), |i, c| {
                let (kind, a) = maps[b[c]];
                increasing(kind, a, x[(i, c)])
            }))
            .collect();
        for stat in [Statistic::Rho, Statistic::Tau] {
            let opts = CorrelationOptions::with_statistic(stat);
            let a = estimate_correlation(&design, &blocks, &opts).unwrap();
            let b = estimate_correlation(&design, &transformed, &opts).unwrap();
            let same = a.values().iter().zip(b.values().iter()).all(|(u, v)| u.to_bits() == v.to_bits());
            if !same || a.mask() != b.mask() {
                changed += 1;
            }
        }
    }
    verdict(changed == 0, format!("50 datasets x 2 statistics; {changed} not bitwise identical"))
}

fn random_mask(rng: &mut ChaCha8Rng, p: usize) -> EdgeSet {
    let left: Vec<bool> = (0..p).map(|_| rng.random::<bool>()).collect();
    let mut zero = EdgeSet::new(p);
    for i in 0..p {
        for j in (i + 1)..p {
            if left[i] != left[j] && rng.random::<f64>() < 0.7 {
                zero.insert(i, j).unwrap();
            }
        }
    }
    zero
}

fn glasso_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut inversion_worst = 0.0_f64;
    for _ in 0..100 {
        let p = rng.random_range(2..=50);
        let sigma = random_spd(&mut rng, p, 0.2);
        let est = solve(&sigma, &PenaltyMatrix::uniform(p, 0.0).unwrap(), &SolverOptions::default()).unwrap();
        inversion_worst = inversion_worst.max(max_abs(&(est.theta() * &sigma - DMatrix::identity(p, p))));
    }
    let (mut kkt_worst, mut solves, mut constrained) = (0.0_f64, 0, 0);
    for k in 0..200 {
        let p = rng.random_range(3..=30);
        let lambda = rng.random_range(0.0..0.3);
        let full = to_correlation(&random_spd(&mut rng, p, 0.4));
        let pen = PenaltyMatrix::uniform(p, lambda).unwrap();
        let (sigma, zero) = if k % 2 == 0 {
            (full, None)
        } else {
            let zero = random_mask(&mut rng, p);
            let mut s = full;
            for (i, j) in zero.iter() {
                s[(i, j)] = 0.0;
                s[(j, i)] = 0.0;
            }
            (s, Some(zero))
        };
        let opts = SolverOptions {
            zero_constraint: zero.clone(),
            ..SolverOptions::default()
        };
        if let Ok((est, _)) = solve_with_report(&sigma, &pen, &opts) {
            kkt_worst = kkt_worst.max(kkt_residual(&sigma, &pen, &est, zero.as_ref()).unwrap());
            solves += 1;
            constrained += usize::from(zero.is_some());
        }
    }
    verdict(
        inversion_worst <= INVERSION_TOL && kkt_worst <= KKT_TOL && solves == 200,
        format!(
            "100 inversions, max |ΘΣ - I| {inversion_worst:.1e} (tol {INVERSION_TOL:.0e}); {solves}/200 converged solves ({constrained} constrained), max KKT {kkt_worst:.1e} (tol {KKT_TOL:.0e})"
        ),
    )
}

fn random_block(rng: &mut ChaCha8Rng, p: usize) -> Vec<usize> {
    let size = rng.random_range(1..p);
    let mut b = sample(rng, p, size).into_vec();
    b.sort_unstable();
    b
}

fn spectral(m: &DMatrix<f64>) -> f64 {
    jacobi_eigenvalues(m).iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

fn schur_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0_f64;
    for _ in 0..200 {
        let p = rng.random_range(2..=30);
        let theta = random_spd(&mut rng, p, 0.3);
        let block = random_block(&mut rng, p);
        let expect = inverse_gauss_jordan(&sub(&inverse_gauss_jordan(&theta), &block));
        worst = worst.max(max_abs(&(schur_complement(&theta, &block).unwrap() - expect)));
    }
    let mut c2_violations = 0;
    let mut c2_done = 0;
    while c2_done < 500 {
        let p = rng.random_range(2..=15);
        let x = random_spd(&mut rng, p, 0.2);
        let scale = rng.random_range(0.001..0.5);
        let e = DMatrix::from_fn(p, p, |_, _| standard_normal(&mut rng) * scale);
        let y = &x + (&e + e.transpose()) * 0.5;
        if y.clone().cholesky().is_none() {
            continue;
        }
        c2_done += 1;
        let block = random_block(&mut rng, p);
        let lhs = max_abs(&(schur_complement(&x, &block).unwrap() - schur_complement(&y, &block).unwrap()));
        let cond = |m: &DMatrix<f64>| {
            let ev = jacobi_eigenvalues(m);
            ev[ev.len() - 1] / ev[0]
        };
        let rhs = cond(&x) * cond(&y) * spectral(&(&x - &y));
        if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
            c2_violations += 1;
        }
    }
    let mut c3_violations = 0;
    for _ in 0..500 {
        let p = rng.random_range(1..=20);
        let density = rng.random::<f64>();
        let mut x = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                if rng.random::<f64>() < density {
                    let v = standard_normal(&mut rng);
                    x[(i, j)] = v;
                    x[(j, i)] = v;
                }
            }
        }
        let nonzeros = x.iter().filter(|v| **v != 0.0).count() as f64;
        let degree = (0..p).map(|i| x.row(i).iter().filter(|v| **v != 0.0).count()).max().unwrap_or(0) as f64;
        if spectral(&x) > nonzeros.sqrt().min(degree) * max_abs(&x) * (1.0 + 1e-10) + 1e-12 {
            c3_violations += 1;
        }
    }
    verdict(
        worst <= SCHUR_TOL && c2_violations == 0 && c3_violations == 0,
        format!(
            "200 Schur checks, max diff {worst:.1e} (tol {SCHUR_TOL:.0e}); conditioning bound violations {c2_violations}/500; support bound violations {c3_violations}/500"
        ),
    )
}

fn population_recovery() -> Verdict {
    let eps = THRESHOLD_MARGIN;
    let (mut eligible, mut recovered, mut scanned) = (0, 0, 0);
    let solver = SolverOptions {
        tolerance: POPULATION_TOLERANCE,
        max_iterations: 100_000,
        ..SolverOptions::default()
    };
    for seed in 0..400 {
        if eligible >= 2 * MIN_RECOVERY_INSTANCES {
            break;
        }
        scanned += 1;
        let (theta, sigma, design) = two_block_instance(seed);
        let diag = population_diagnostics(&theta, &design).unwrap();
        if !check_assumptions(&theta, &design, &diag).all() {
            continue;
        }
        let oracle = superset_oracle(&theta, &sigma, &design, POPULATION_ZERO);
        let (Some(nu), Some(psi)) = (oracle.nu, oracle.psi) else { continue };
        let (lo, hi) = (oracle.delta + eps, nu - oracle.delta - eps);
        if !(lo < hi && psi > 2.0 * eps) {
            continue;
        }
        eligible += 1;
        let fit = fit_madgq(&design, &masked_of(&sigma, &design), &PenaltyMatrix::uniform(design.p(), 0.0).unwrap(), &solver).unwrap();
        let mut ok = (diag.delta - oracle.delta).abs() < 1e-7;
        for tau1 in [lo, 0.5 * (lo + hi), hi] {
            for tau2 in [eps * 1.001, 0.5 * psi, psi - eps] {
                let q = fit.quilt(MadgqThresholds::new(tau1, tau2).unwrap()).unwrap();
                ok &= q.edges_o.iter().eq(oracle.edges_o.iter().copied());
                ok &= q.edges_oc_superset.iter().eq(oracle.superset.iter().copied());
            }
        }
        recovered += usize::from(ok);
    }
    verdict(
        eligible >= MIN_RECOVERY_INSTANCES && recovered == eligible,
        format!(
            "{eligible} instances meeting the assumptions (of {scanned} scanned, p <= 28), exact recovery in {recovered}; 9 threshold pairs each, margin {eps:.0e}"
        ),
    )
}

fn planted(rng: &mut ChaCha8Rng, p: usize, r: usize, q: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut v = DMatrix::from_fn(p, r, |_, _| standard_normal(rng));
    for i in 0..p {
        let norm = v.row(i).norm();
        v.row_mut(i).scale_mut((1.0 - q).sqrt() / norm);
    }
    let low = &v * v.transpose();
    (&low + DMatrix::identity(p, p) * q, low)
}

fn bsvd_exactness() -> Verdict {
    let mut worst = 0.0_f64;
    let mut failures = 0;
    for r in 1..=3 {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(600 + seed * 3 + r as u64);
            let p = rng.random_range(20..=40);
            let q = rng.random_range(0.1..0.6);
            let (sigma, low) = planted(&mut rng, p, r, q);
            let o = p / 2 + r + 2;
            let design = chained_design(&mut rng, p, 3, o, r, 100);
            let masked = masked_of(&sigma, &design);
            let est = match bsvd_factor(&masked, &design, r, FloorEstimator::BlockEigen) {
                Ok(f) => f.low_rank(),
                Err(_) => {
                    failures += 1;
                    continue;
                }
            };
            let err = masked
                .mask()
                .unobserved_pairs()
                .map(|(i, j)| (est[(i, j)] - low[(i, j)]).abs())
                .fold(0.0, f64::max);
            if err > BSVD_TOL {
                failures += 1;
            }
            worst = worst.max(err);
        }
    }
    verdict(
        failures == 0,
        format!("ranks 1-3 x 50 seeds, {failures} failures, max unobserved error {worst:.1e} (tol {BSVD_TOL:.0e})"),
    )
}

fn concentration() -> Verdict {
    let config = ScenarioConfig {
        p: 50,
        model: ModelSpec::Precision { graph: GraphSpec::small_world(4, 0.1) },
        marginal: Marginal::Gaussian,
        samples_per_block: 500,
        blocks: 2,
        block_size: 30,
        sampling: SamplingMode::Independent,
    };
    let mut ratios = Vec::new();
    let mut pass = true;
    for stat in [Statistic::Rho, Statistic::Tau] {
        let mut mean = [0.0; 2];
        for rep in 0..20u64 {
            let truth = generate_model(&config, 700 + rep).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(800 + rep);
            let design = assign_blocks(50, 2, 30, 500, &mut rng).unwrap();
            for (slot, n) in [500usize, 2000].into_iter().enumerate() {
                let d = design.with_sample_sizes(vec![n; 2]).unwrap();
                let blocks = sample_blocks(&truth.sigma, &d, Marginal::Gaussian, SamplingMode::Independent, 900 + rep).unwrap();
                let est = estimate_correlation(&d, &blocks, &CorrelationOptions::with_statistic(stat)).unwrap();
                let err = est
                    .mask()
                    .observed_pairs()
                    .map(|(i, j)| (est.get(i, j) - truth.sigma[(i, j)]).abs())
                    .fold(0.0, f64::max);
                mean[slot] += err / 20.0;
            }
        }
        let ratio = mean[1] / mean[0];
        pass &= (RATIO_RANGE.0..=RATIO_RANGE.1).contains(&ratio);
        ratios.push(format!("{stat} {ratio:.3}"));
    }
    verdict(
        pass,
        format!("p = 50, 20 replicates, error ratio n=2000/n=500: {} (range {:?})", ratios.join(", "), RATIO_RANGE),
    )
}

fn gamma_base() -> ScenarioConfig {
    ScenarioConfig {
        p: 100,
        model: ModelSpec::Precision { graph: GraphSpec::small_world(4, 0.1) },
        marginal: Marginal::Gamma { shape: 5.0, scale: 1.0 },
        samples_per_block: 2000,
        blocks: 2,
        block_size: 60,
        sampling: SamplingMode::Independent,
    }
}

fn scenario(id: &str, base: &ScenarioConfig, blocks: usize, block_size: usize) -> Scenario {
    Scenario {
        id: id.into(),
        config: ScenarioConfig {
            blocks,
            block_size,
            ..base.clone()
        },
    }
}

fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn sweep(scenarios: &[Scenario], statistic: Statistic, seed: u64) -> (SweepResult, Duration) {
    let options = BenchmarkOptions {
        replicates: SWEEP_REPLICATES,
        root_seed: seed,
        correlation: CorrelationOptions::with_statistic(statistic),
        threads: threads(),
        ..BenchmarkOptions::default()
    };
    let started = Instant::now();
    let result = run_sweep(scenarios, &options).expect("sweep runs");
    (result, started.elapsed())
}

fn mean(result: &SweepResult, id: &str, method: Method, fdp: bool) -> f64 {
    let cell = result.cell(id, method).expect("cell exists");
    let stats = if fdp { cell.fdp } else { cell.tpr };
    stats.expect("some replicate succeeded").mean
}

fn gamma_ordering(result: &SweepResult, elapsed: Duration) -> Verdict {
    let [mad, bsvd, zero] = Method::ALL.map(|m| mean(result, "o60", m, false));
    verdict(
        mad >= bsvd && bsvd >= zero && mad >= MIN_MAD_TPR && elapsed <= SCENARIO_RUNTIME,
        format!(
            "mean TPR madgq {mad:.3}, bsvd {bsvd:.3}, zero {zero:.3}; need madgq >= bsvd >= zero and madgq >= {MIN_MAD_TPR}; sweep {:.0} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn cauchy_ordering() -> Verdict {
    let base = ScenarioConfig {
        model: ModelSpec::Spiked {
            spiked: SpikedSpec {
                rank: 3,
                eigen_ratio: 10.0,
                neighbors: 4,
                rewire_prob: 0.1,
                weight_range: (0.2, 0.5),
            },
        },
        marginal: Marginal::Cauchy { location: 0.0, scale: 3.0 },
        ..gamma_base()
    };
    let (result, _) = sweep(&[scenario("o60", &base, 2, 60)], Statistic::Tau, 2025);
    let [mad, bsvd, zero] = Method::ALL.map(|m| mean(&result, "o60", m, false));
    let [mad_fdp, bsvd_fdp, _] = Method::ALL.map(|m| mean(&result, "o60", m, true));
    verdict(
        bsvd >= mad && bsvd_fdp <= mad_fdp && mad > zero && bsvd > zero,
        format!(
            "mean TPR/FDP madgq {mad:.3}/{mad_fdp:.3}, bsvd {bsvd:.3}/{bsvd_fdp:.3}, zero TPR {zero:.3}"
        ),
    )
}

fn trends(result: &SweepResult) -> Verdict {
    let mut broken = Vec::new();
    let mut table = Vec::new();
    for m in Method::ALL {
        let by_o: Vec<f64> = ["o52", "o60", "o68"].iter().map(|id| mean(result, id, m, false)).collect();
        let by_k: Vec<f64> = ["o60", "K4", "K6"].iter().map(|id| mean(result, id, m, false)).collect();
        if by_o.windows(2).any(|w| w[1] < w[0] - TREND_SLACK) {
            broken.push(format!("{m} in o"));
        }
        if by_k.windows(2).any(|w| w[1] > w[0] + TREND_SLACK) {
            broken.push(format!("{m} in K"));
        }
        table.push(format!(
            "{m} o:{:.3}/{:.3}/{:.3} K:{:.3}/{:.3}/{:.3}",
            by_o[0], by_o[1], by_o[2], by_k[0], by_k[1], by_k[2]
        ));
    }
    verdict(
        broken.is_empty(),
        format!("mean TPR {}; slack {TREND_SLACK}; violations: {}", table.join("; "), if broken.is_empty() { "none".into() } else { broken.join(", ") }),
    )
}

fn byte_identical_benchmark() -> Verdict {
    let config = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark_smoke.toml");
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (run, threads) in [(0, "1"), (1, "2")] {
        let out = dir.path().join(format!("run{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_npnquilt"))
            .args(["benchmark", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .args(["--replicates", "2", "--threads", threads])
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(out.join("results.csv")).unwrap());
    }
    verdict(
        outputs[0] == outputs[1] && !outputs[0].is_empty(),
        format!("two CLI runs (1 and 2 threads), results.csv {} bytes, identical: {}", outputs[0].len(), outputs[0] == outputs[1]),
    )
}

#[allow(clippy::vec_init_then_push)]
fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let mut passed = Vec::new();
    passed.push(criterion(1, "rank-statistic oracle equivalence", rank_statistics));
    passed.push(criterion(2, "monotone invariance", monotone_invariance));
    passed.push(criterion(3, "graphical lasso correctness", glasso_correctness));
    passed.push(criterion(4, "Schur identities and bounds", schur_identities));
    passed.push(criterion(5, "population exact recovery", population_recovery));
    passed.push(criterion(6, "block SVD exactness", bsvd_exactness));
    passed.push(criterion(7, "concentration scaling", concentration));

    let base = gamma_base();
    let scenarios = [
        scenario("o52", &base, 2, 52),
        scenario("o60", &base, 2, 60),
        scenario("o68", &base, 2, 68),
        scenario("K4", &base, 4, 30),
        scenario("K6", &base, 6, 20),
    ];
    let gamma = catch_unwind(|| sweep(&scenarios, Statistic::Rho, 2024)).ok();
    passed.push(criterion(8, "Gamma scenario ordering", || match &gamma {
        Some((r, t)) => gamma_ordering(r, *t),
        None => verdict(false, "sweep failed".into()),
    }));
    passed.push(criterion(9, "Cauchy spiked scenario ordering", cauchy_ordering));
    passed.push(criterion(10, "block size and count trends", || match &gamma {
        Some((r, _)) => trends(r),
        None => verdict(false, "sweep failed".into()),
    }));
    passed.push(criterion(11, "benchmark determinism", byte_identical_benchmark));

    let count = passed.iter().filter(|&&p| p).count();
    println!("acceptance: {count}/{} criteria passed", passed.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && count < passed.len() {
        std::process::exit(1);
    }
}
