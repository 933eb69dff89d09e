//! Edge-recovery metrics, tuning rules and the benchmark sweep.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QuiltError, Result};
use crate::glasso::{PenaltyMatrix, SolverOptions};
use crate::linalg::log_det_spd;
use crate::lrgq::{bsvd_factor, run_lrgq, zero_impute_baseline, BsvdOptions, FloorEstimator};
use crate::madgq::{default_tau2, fit_madgq, MadgqFit, MadgqThresholds, DEFAULT_TAU2_SCALE};
use crate::rank_corr::{estimate_correlation, CorrelationOptions};
use crate::simgen::{derive_seed, simulate_scenario, ScenarioConfig, StageSeeds};
use crate::types::{BlockDesign, EdgeSet, MaskedCorrelation, PairMask, PrecisionEstimate};

/// Which pairs a comparison counts.
#[derive(Debug, Clone, Copy)]
pub enum Restriction<'a> {
    All,
    Observed(&'a PairMask),
    Unobserved(&'a PairMask),
}

impl Restriction<'_> {
    fn admits(&self, i: usize, j: usize) -> bool {
        match self {
            Restriction::All => true,
            Restriction::Observed(m) => m.is_observed(i, j),
            Restriction::Unobserved(m) => !m.is_observed(i, j),
        }
    }
}

/// Counts and rates of an estimated edge set against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `tp / (tp + fn)`; undefined when the truth is empty.
    pub tpr: Option<f64>,
    /// `fp / max(tp + fp, 1)`.
    pub fdp: f64,
    /// `2tp / (2tp + fp + fn)`, taken as 1 when both sets are empty.
    pub f1: f64,
}

impl RecoveryMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let tpr = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        let fdp = fp as f64 / (tp + fp).max(1) as f64;
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 };
        Self { tp, fp, fn_, tpr, fdp, f1 }
    }
}

/// Compares two edge sets over the admitted pairs.
pub fn compare_edges(estimate: &EdgeSet, truth: &EdgeSet, restrict: Restriction<'_>) -> Result<RecoveryMetrics> {
    if estimate.p() != truth.p() {
        return Err(QuiltError::DimensionMismatch {
            expected: truth.p(),
            found: estimate.p(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (i, j) in estimate.iter().filter(|&(i, j)| restrict.admits(i, j)) {
        if truth.contains(i, j) {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    for (i, j) in truth.iter().filter(|&(i, j)| restrict.admits(i, j)) {
        if !estimate.contains(i, j) {
            fn_ += 1;
        }
    }
    Ok(RecoveryMetrics::from_counts(tp, fp, fn_))
}

/// Winner of an exhaustive F1 search.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Choice<P> {
    pub index: usize,
    pub param: P,
    pub metrics: RecoveryMetrics,
    pub edges: EdgeSet,
}

/// Evaluates every grid point against the truth and keeps the best F1. Ties
/// go to the sparser estimate, then to the earlier grid point. Failed points
/// are skipped.
pub fn tune_f1_oracle<P: Clone>(
    grid: &[P],
    truth: &EdgeSet,
    mut run: impl FnMut(&P) -> Result<EdgeSet>,
) -> Result<F1Choice<P>> {
    if grid.is_empty() {
        return Err(QuiltError::InvalidInput("empty tuning grid".into()));
    }
    let mut best: Option<F1Choice<P>> = None;
    let mut last_error = None;
    for (index, param) in grid.iter().enumerate() {
        let edges = match run(param) {
            Ok(e) => e,
            Err(e) => {
                log::debug!("grid point {index} failed: {e}");
                last_error = Some(e);
                continue;
            }
        };
        let metrics = compare_edges(&edges, truth, Restriction::All)?;
        let better = match &best {
            None => true,
            Some(b) => metrics.f1 > b.metrics.f1 || (metrics.f1 == b.metrics.f1 && edges.len() < b.edges.len()),
        };
        if better {
            best = Some(F1Choice {
                index,
                param: param.clone(),
                metrics,
                edges,
            });
        }
    }
    best.ok_or_else(|| {
        QuiltError::AllCandidatesFailed(last_error.map_or_else(String::new, |e| e.to_string()))
    })
}

/// Default edge-count weight of the extended BIC.
pub const DEFAULT_EBIC_GAMMA: f64 = 0.5;

/// `−n (log det Θ − ⟨S, Θ⟩) + |E| log n + 4 γ |E| log p`, with `|E|` the
/// number of unordered off-diagonal support pairs.
pub fn ebic(sigma: &DMatrix<f64>, theta: &PrecisionEstimate, n: f64, gamma: f64) -> Result<f64> {
    let p = theta.p();
    if sigma.nrows() != p {
        return Err(QuiltError::DimensionMismatch {
            expected: p,
            found: sigma.nrows(),
        });
    }
    let t = theta.theta();
    let logdet = log_det_spd(t)?;
    let inner: f64 = sigma.iter().zip(t.iter()).map(|(a, b)| a * b).sum();
    let edges = theta.support().len() as f64;
    Ok(-n * (logdet - inner) + edges * n.ln() + 4.0 * gamma * edges * (p as f64).ln())
}

/// BIC score of every feasible rank and the chosen one.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSelection {
    pub rank: usize,
    /// `(r, score)` with `None` for infeasible ranks.
    pub scores: Vec<(usize, Option<f64>)>,
}

/// Smallest mean squared residual the rank criterion distinguishes; exact
/// inputs leave only rounding noise below it.
const RESIDUAL_FLOOR: f64 = 1e-24;

/// `|O| log(RSS/|O|) + (p r − r(r−1)/2) log |O|` over observed off-diagonal
/// pairs, RSS comparing the input with `CCᵀ`. Ties go to the smaller rank.
pub fn bic_rank(masked: &MaskedCorrelation, design: &BlockDesign, r_grid: &[usize], floor: FloorEstimator) -> Result<RankSelection> {
    let pairs: Vec<(usize, usize)> = masked.mask().observed_pairs().collect();
    if pairs.is_empty() {
        return Err(QuiltError::InvalidInput("no observed off-diagonal pairs".into()));
    }
    let m = pairs.len() as f64;
    let p = design.p() as f64;
    let mut scores = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut sorted = r_grid.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &r in &sorted {
        let score = bsvd_factor(masked, design, r, floor).ok().map(|f| {
            let low = f.low_rank();
            let rss: f64 = pairs.iter().map(|&(i, j)| (masked.get(i, j) - low[(i, j)]).powi(2)).sum();
            let rf = r as f64;
            m * (rss / m).max(RESIDUAL_FLOOR).ln() + (p * rf - rf * (rf - 1.0) / 2.0) * m.ln()
        });
        if let Some(s) = score {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((r, s));
            }
        }
        scores.push((r, score));
    }
    let (rank, _) = best.ok_or_else(|| QuiltError::AllCandidatesFailed("no feasible rank in grid".into()))?;
    Ok(RankSelection { rank, scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    /// Fraction of each block's rows kept in a subsample.
    pub subsample_fraction: f64,
    pub n_subsamples: usize,
    /// Largest admissible (monotonized) instability.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            subsample_fraction: 0.5,
            n_subsamples: 20,
            threshold: 0.05,
            seed: 0,
        }
    }
}

/// Outcome of stability selection.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySelection {
    /// Chosen grid index.
    pub index: usize,
    /// Raw instability per grid point.
    pub instability: Vec<f64>,
    /// Running maximum from the most regularized end.
    pub monotone: Vec<f64>,
}

/// Rows drawn without replacement from every block.
pub fn subsample_blocks<R: Rng + ?Sized>(blocks: &[DMatrix<f64>], fraction: f64, rng: &mut R) -> Result<Vec<DMatrix<f64>>> {
    blocks
        .iter()
        .map(|b| {
            let n = b.nrows();
            let m = ((n as f64) * fraction).floor() as usize;
            if m < 3 || m > n {
                return Err(QuiltError::InvalidInput(format!(
                    "subsample of {m} rows from {n} is degenerate"
                )));
            }
            let mut rows = sample(rng, n, m).into_vec();
            rows.sort_unstable();
            Ok(DMatrix::from_fn(m, b.ncols(), |i, j| b[(rows[i], j)]))
        })
        .collect()
}

/// Edge instability `mean over pairs of 2ξ(1 − ξ)` at every grid point, where
/// `ξ` is a pair's selection frequency over the subsamples. `run` receives
/// subsampled blocks and returns one edge set per grid point, the grid ordered
/// from most to least regularized. The selected point is the least regularized
/// one whose running-maximum instability stays within the threshold.
pub fn stability_select(
    blocks: &[DMatrix<f64>],
    grid_len: usize,
    options: &StabilityOptions,
    mut run: impl FnMut(&[DMatrix<f64>]) -> Result<Vec<EdgeSet>>,
) -> Result<StabilitySelection> {
    if options.n_subsamples < 2 {
        return Err(QuiltError::InvalidInput("stability selection needs at least 2 subsamples".into()));
    }
    if grid_len == 0 {
        return Err(QuiltError::InvalidInput("empty tuning grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut counts: Vec<BTreeMap<(usize, usize), usize>> = vec![BTreeMap::new(); grid_len];
    let mut p = 0;
    for _ in 0..options.n_subsamples {
        let sub = subsample_blocks(blocks, options.subsample_fraction, &mut rng)?;
        let sets = run(&sub)?;
        if sets.len() != grid_len {
            return Err(QuiltError::DimensionMismatch {
                expected: grid_len,
                found: sets.len(),
            });
        }
        for (g, set) in sets.iter().enumerate() {
            p = set.p();
            for e in set.iter() {
                *counts[g].entry(e).or_default() += 1;
            }
        }
    }
    let pairs = (p * p.saturating_sub(1) / 2).max(1) as f64;
    let b = options.n_subsamples as f64;
    let instability: Vec<f64> = counts
        .iter()
        .map(|c| c.values().map(|&k| {
            let xi = k as f64 / b;
            2.0 * xi * (1.0 - xi)
        }).sum::<f64>() / pairs)
        .collect();
    let mut monotone = Vec::with_capacity(grid_len);
    let mut running = 0.0_f64;
    for &d in &instability {
        running = running.max(d);
        monotone.push(running);
    }
    let index = monotone.iter().rposition(|&d| d <= options.threshold).unwrap_or(0);
    Ok(StabilitySelection {
        index,
        instability,
        monotone,
    })
}

/// Bisects `tau1` so the total edge count of the fit lands within
/// `relative_tolerance` of `target`. Returns the closest thresholds found.
pub fn match_edge_count(fit: &MadgqFit, tau2: f64, target: usize, relative_tolerance: f64) -> Result<MadgqThresholds> {
    let count = |tau1: f64| -> Result<usize> { Ok(fit.quilt(MadgqThresholds::new(tau1, tau2)?)?.edges().len()) };
    let max_abs = fit.theta_hat.theta().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let (mut lo, mut hi) = (tau2 * (1.0 + 1e-9), max_abs.max(tau2 * 2.0) * 1.01);
    let slack = (target as f64 * relative_tolerance).max(0.5);
    let mut best = (f64::INFINITY, lo);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let c = count(mid)?;
        let miss = (c as f64 - target as f64).abs();
        if miss < best.0 {
            best = (miss, mid);
        }
        if miss <= slack {
            break;
        }
        // edge count falls as tau1 rises
        if c > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    MadgqThresholds::new(best.1, tau2)
}

/// Estimation methods compared in benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "madgq-npn")]
    MadgqNpn,
    #[serde(rename = "bsvd-npn")]
    BsvdNpn,
    #[serde(rename = "zero-impute")]
    ZeroImpute,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::MadgqNpn, Method::BsvdNpn, Method::ZeroImpute];

    pub fn name(&self) -> &'static str {
        match self {
            Method::MadgqNpn => "madgq-npn",
            Method::BsvdNpn => "bsvd-npn",
            Method::ZeroImpute => "zero-impute",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected madgq-npn, bsvd-npn or zero-impute)"))
    }
}

/// Hyperparameter grids searched by the F1 oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    /// Uniform penalties searched for every method. When empty, a geometric
    /// path from the largest observed off-diagonal `|Σ̂|` down to
    /// `lambda_min_ratio` times it is used instead.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_path_length")]
    pub lambda_path_length: usize,
    #[serde(default = "default_min_ratio")]
    pub lambda_min_ratio: f64,
    /// Edge thresholds on observed pairs; values not above `tau2` are
    /// skipped. When empty, each fit gets a geometric path from its largest
    /// observed off-diagonal `|Θ̂|` down to `tau1_min_ratio` times it.
    #[serde(default)]
    pub tau1: Vec<f64>,
    #[serde(default = "default_tau1_path_length")]
    pub tau1_path_length: usize,
    #[serde(default = "default_tau1_min_ratio")]
    pub tau1_min_ratio: f64,
    /// Scale of the distortion threshold rule.
    #[serde(default = "default_tau2_scale")]
    pub tau2_scale: f64,
    /// Candidate ranks for the BIC choice.
    #[serde(default = "default_ranks")]
    pub ranks: Vec<usize>,
}

fn default_path_length() -> usize {
    12
}

fn default_min_ratio() -> f64 {
    0.02
}

fn default_tau1_path_length() -> usize {
    15
}

fn default_tau1_min_ratio() -> f64 {
    0.01
}

fn default_tau2_scale() -> f64 {
    DEFAULT_TAU2_SCALE
}

fn default_ranks() -> Vec<usize> {
    (1..=6).collect()
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            lambdas: Vec::new(),
            lambda_path_length: default_path_length(),
            lambda_min_ratio: default_min_ratio(),
            tau1: Vec::new(),
            tau1_path_length: default_tau1_path_length(),
            tau1_min_ratio: default_tau1_min_ratio(),
            tau2_scale: default_tau2_scale(),
            ranks: default_ranks(),
        }
    }
}

impl TuningGrid {
    /// The penalties to search on `sigma`, largest first.
    pub fn lambdas_for(&self, sigma: &MaskedCorrelation) -> Result<Vec<f64>> {
        if !self.lambdas.is_empty() {
            return Ok(self.lambdas.clone());
        }
        if self.lambda_path_length == 0 || !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(QuiltError::InvalidInput(
                "lambda path needs a positive length and a ratio in (0, 1)".into(),
            ));
        }
        let top = sigma
            .mask()
            .observed_pairs()
            .map(|(i, j)| sigma.get(i, j).abs())
            .fold(0.0_f64, f64::max);
        if !(top > 0.0) {
            return Err(QuiltError::InvalidInput("no nonzero observed correlation to scale the penalty path".into()));
        }
        Ok(lambda_path(top, self.lambda_min_ratio, self.lambda_path_length))
    }
}

impl TuningGrid {
    /// Edge thresholds to search on one fit, all above `tau2`.
    pub fn tau1_for(&self, fit: &MadgqFit, tau2: f64) -> Result<Vec<f64>> {
        let raw = if self.tau1.is_empty() {
            if self.tau1_path_length == 0 || !(self.tau1_min_ratio > 0.0 && self.tau1_min_ratio < 1.0) {
                return Err(QuiltError::InvalidInput(
                    "tau1 path needs a positive length and a ratio in (0, 1)".into(),
                ));
            }
            let theta = fit.theta_hat.theta();
            let top = fit
                .mask
                .observed_pairs()
                .map(|(i, j)| theta[(i, j)].abs())
                .fold(0.0_f64, f64::max);
            if top > tau2 {
                lambda_path(top, self.tau1_min_ratio, self.tau1_path_length)
            } else {
                Vec::new()
            }
        } else {
            self.tau1.clone()
        };
        Ok(raw.into_iter().filter(|&t| t > tau2).collect())
    }
}

/// `count` values from `top` down to `top · min_ratio`, evenly spaced in log scale.
pub fn lambda_path(top: f64, min_ratio: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![top];
    }
    let step = min_ratio.ln() / (count - 1) as f64;
    (0..count).map(|k| top * (step * k as f64).exp()).collect()
}

/// A named scenario in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOptions {
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub root_seed: u64,
    pub correlation: CorrelationOptions,
    pub grid: TuningGrid,
    pub solver: SolverOptions,
    pub bsvd: BsvdOptions,
    /// Largest tolerated fraction of failed replicates per cell.
    pub max_failure_rate: f64,
    /// Worker threads for replicate fan-out; 1 runs inline.
    pub threads: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            replicates: 50,
            root_seed: 0,
            correlation: CorrelationOptions::default(),
            grid: TuningGrid::default(),
            solver: SolverOptions::default(),
            bsvd: BsvdOptions::default(),
            max_failure_rate: 0.2,
            threads: 1,
        }
    }
}

/// Seeds of replicate `replicate` of scenario `scenario`. The model seed
/// depends on the replicate only, so scenarios of one sweep share their true
/// graphs replicate by replicate; designs and data are scenario specific.
pub fn replicate_seeds(root: u64, scenario: usize, replicate: usize) -> StageSeeds {
    StageSeeds {
        graph: derive_seed(root, &[replicate as u64, 0]),
        design: derive_seed(root, &[replicate as u64, 1, scenario as u64]),
        data: derive_seed(root, &[replicate as u64, 2, scenario as u64]),
    }
}

/// Tuned parameters of one method run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TunedParams {
    pub lambda: Option<f64>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub rank: Option<usize>,
}

/// One (scenario, method, replicate) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub scenario: String,
    pub method: Method,
    pub block_size: usize,
    pub blocks: usize,
    pub replicate: usize,
    pub outcome: std::result::Result<MethodOutcome, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub all: RecoveryMetrics,
    pub observed: RecoveryMetrics,
    pub unobserved: RecoveryMetrics,
    pub params: TunedParams,
    pub edges: usize,
}

fn outcome_for(edges: EdgeSet, truth: &EdgeSet, mask: &PairMask, params: TunedParams) -> Result<MethodOutcome> {
    Ok(MethodOutcome {
        all: compare_edges(&edges, truth, Restriction::All)?,
        observed: compare_edges(&edges, truth, Restriction::Observed(mask))?,
        unobserved: compare_edges(&edges, truth, Restriction::Unobserved(mask))?,
        params,
        edges: edges.len(),
    })
}

/// F1-oracle tuned run of one method on a masked correlation.
pub fn tune_method(
    method: Method,
    design: &BlockDesign,
    sigma: &MaskedCorrelation,
    truth: &EdgeSet,
    grid: &TuningGrid,
    solver: &SolverOptions,
    bsvd: &BsvdOptions,
) -> Result<MethodOutcome> {
    let p = design.p();
    let mask = design.pair_mask();
    let lambdas = grid.lambdas_for(sigma)?;
    match method {
        Method::MadgqNpn => {
            let tau2 = default_tau2(design, grid.tau2_scale);
            let mut fits = Vec::new();
            let mut points = Vec::new();
            for &lambda in &lambdas {
                let pen = PenaltyMatrix::uniform(p, lambda)?;
                match fit_madgq(design, sigma, &pen, solver) {
                    Ok(fit) => {
                        let l = fits.len();
                        points.extend(grid.tau1_for(&fit, tau2)?.into_iter().map(|t| (l, t)));
                        fits.push((lambda, fit));
                    }
                    Err(e) => log::debug!("lambda {lambda} failed: {e}"),
                }
            }
            if points.is_empty() {
                return Err(QuiltError::AllCandidatesFailed("no usable (lambda, tau1) pair".into()));
            }
            let choice = tune_f1_oracle(&points, truth, |&(l, tau1)| {
                Ok(fits[l].1.quilt(MadgqThresholds::new(tau1, tau2)?)?.edges())
            })?;
            let (l, tau1) = choice.param;
            let params = TunedParams {
                lambda: Some(fits[l].0),
                tau1: Some(tau1),
                tau2: Some(tau2),
                rank: None,
            };
            outcome_for(choice.edges, truth, &mask, params)
        }
        Method::BsvdNpn => {
            let rank = bic_rank(sigma, design, &grid.ranks, bsvd.floor)?.rank;
            let choice = tune_f1_oracle(&lambdas, truth, |&lambda| {
                let pen = PenaltyMatrix::uniform(p, lambda)?;
                Ok(run_lrgq(design, sigma, rank, &pen, bsvd, solver)?.edges)
            })?;
            let params = TunedParams {
                lambda: Some(choice.param),
                rank: Some(rank),
                ..TunedParams::default()
            };
            outcome_for(choice.edges, truth, &mask, params)
        }
        Method::ZeroImpute => {
            let choice = tune_f1_oracle(&lambdas, truth, |&lambda| {
                let pen = PenaltyMatrix::uniform(p, lambda)?;
                Ok(zero_impute_baseline(sigma, &pen, bsvd.ridge, solver)?.1)
            })?;
            let params = TunedParams {
                lambda: Some(choice.param),
                ..TunedParams::default()
            };
            outcome_for(choice.edges, truth, &mask, params)
        }
    }
}

/// Simulates one replicate of a scenario and runs every requested method.
pub fn run_replicate(scenario: &Scenario, scenario_index: usize, replicate: usize, options: &BenchmarkOptions) -> Vec<ReplicateRecord> {
    let seeds = replicate_seeds(options.root_seed, scenario_index, replicate);
    let record = |method: Method, outcome| ReplicateRecord {
        scenario: scenario.id.clone(),
        method,
        block_size: scenario.config.block_size,
        blocks: scenario.config.blocks,
        replicate,
        outcome,
    };
    let prepared = simulate_scenario(&scenario.config, seeds).and_then(|sim| {
        let sigma = estimate_correlation(&sim.design, &sim.blocks, &options.correlation)?;
        Ok((sim, sigma))
    });
    match prepared {
        Err(e) => options
            .methods
            .iter()
            .map(|&m| record(m, Err(e.to_string())))
            .collect(),
        Ok((sim, sigma)) => options
            .methods
            .iter()
            .map(|&m| {
                let out = tune_method(m, &sim.design, &sigma, &sim.truth.edges, &options.grid, &options.solver, &options.bsvd)
                    .map_err(|e| e.to_string());
                record(m, out)
            })
            .collect(),
    }
}

/// Mean and standard deviation of one metric in one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 when fewer than two values.
    pub sd: f64,
    /// False when `sd` rests on fewer than two values.
    pub sd_defined: bool,
    pub count: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let (sd, sd_defined) = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var.sqrt(), true)
        } else {
            (0.0, false)
        };
        Some(Self { mean, sd, sd_defined, count: n })
    }
}

/// Aggregate of one (scenario, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: String,
    pub method: Method,
    pub block_size: usize,
    pub blocks: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub tpr: Option<MeanSd>,
    pub fdp: Option<MeanSd>,
    pub f1: Option<MeanSd>,
}

/// All replicate records of a sweep and their per-cell summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<ReplicateRecord>,
    pub cells: Vec<CellSummary>,
}

impl SweepResult {
    pub fn cell(&self, scenario: &str, method: Method) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.scenario == scenario && c.method == method)
    }
}

/// Groups records by (scenario, method) in first-seen order and averages.
/// Undefined TPRs are left out of the TPR average. Fails when a cell has more
/// than `max_failure_rate` of its replicates failed.
pub fn summarize(records: Vec<ReplicateRecord>, max_failure_rate: f64) -> Result<SweepResult> {
    let mut order: Vec<(String, Method)> = Vec::new();
    for r in &records {
        let key = (r.scenario.clone(), r.method);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    let mut cells = Vec::new();
    for (scenario, method) in order {
        let rs: Vec<&ReplicateRecord> = records.iter().filter(|r| r.scenario == scenario && r.method == method).collect();
        let ok: Vec<&MethodOutcome> = rs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let failed = rs.len() - ok.len();
        if failed as f64 > max_failure_rate * rs.len() as f64 {
            return Err(QuiltError::SweepFailed {
                cell: format!("{scenario}/{method}"),
                failed,
                total: rs.len(),
            });
        }
        let tprs: Vec<f64> = ok.iter().filter_map(|o| o.all.tpr).collect();
        let fdps: Vec<f64> = ok.iter().map(|o| o.all.fdp).collect();
        let f1s: Vec<f64> = ok.iter().map(|o| o.all.f1).collect();
        cells.push(CellSummary {
            scenario,
            method,
            block_size: rs[0].block_size,
            blocks: rs[0].blocks,
            succeeded: ok.len(),
            failed,
            tpr: MeanSd::of(&tprs),
            fdp: MeanSd::of(&fdps),
            f1: MeanSd::of(&f1s),
        });
    }
    Ok(SweepResult { records, cells })
}

/// Every replicate of every scenario. Records come out in (scenario,
/// replicate, method) order whatever the thread count.
pub fn run_sweep(scenarios: &[Scenario], options: &BenchmarkOptions) -> Result<SweepResult> {
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..options.replicates).map(move |rep| (s, rep)))
        .collect();
    let run = |&(s, rep): &(usize, usize)| run_replicate(&scenarios[s], s, rep, options);
    let per_job: Vec<Vec<ReplicateRecord>> = if options.threads <= 1 {
        jobs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.threads)
            .build()
            .map_err(|e| QuiltError::InvalidInput(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    };
    summarize(per_job.into_iter().flatten().collect(), options.max_failure_rate)
}
