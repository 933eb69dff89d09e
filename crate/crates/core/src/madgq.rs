//! Max-determinant graph quilting.
//!
//! The precision matrix is estimated with every never-co-observed pair forced
//! to zero. Thresholding that estimate on the observed pairs gives the edges
//! there. For the unobserved pairs, each block's Schur complement is inspected
//! for small nonzero entries, the footprint the missing edges leave behind;
//! nodes showing it in every block they belong to form a node set, and all
//! unobserved pairs inside that set are reported as candidate edges.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{QuiltError, Result};
use crate::glasso::{self, PenaltyMatrix, SolveReport, SolverOptions, POPULATION_TOLERANCE};
use crate::linalg::{inverse_spd, max_row_abs_sum, principal, submatrix, sym_eigenvalues};
use crate::rank_corr::{estimate_correlation, CorrelationOptions};
use crate::types::{BlockDesign, EdgeSet, MaskedCorrelation, PairMask, PrecisionEstimate, ZERO_SNAP};

/// Scale of the default distortion threshold `c √(log p / min_k n_k)`.
pub const DEFAULT_TAU2_SCALE: f64 = 0.05;

/// Entries of population quantities below this are treated as zero.
pub const POPULATION_ZERO: f64 = 1e-8;

/// Thresholds of the procedure. Edges on observed pairs need `|Θ_ij| > tau1`;
/// a node is flagged when, in every block holding it, its Schur row has an
/// entry strictly between `tau2` and `tau1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MadgqThresholds {
    pub tau1: f64,
    pub tau2: f64,
    /// Scale that produced `tau2` when it came from the default rule.
    pub c: f64,
}

impl MadgqThresholds {
    pub fn new(tau1: f64, tau2: f64) -> Result<Self> {
        if !(tau2 > 0.0 && tau1 > tau2) || !tau1.is_finite() {
            return Err(QuiltError::InvalidInput(format!(
                "thresholds need tau1 > tau2 > 0, got tau1 = {tau1}, tau2 = {tau2}"
            )));
        }
        Ok(Self { tau1, tau2, c: f64::NAN })
    }

    /// `tau2` from [`default_tau2`] with scale `c`.
    pub fn with_default_tau2(tau1: f64, design: &BlockDesign, c: f64) -> Result<Self> {
        let mut t = Self::new(tau1, default_tau2(design, c))?;
        t.c = c;
        Ok(t)
    }
}

/// `c √(log p / min_k n_k)`.
pub fn default_tau2(design: &BlockDesign, c: f64) -> f64 {
    c * ((design.p() as f64).ln() / design.min_sample_size() as f64).sqrt()
}

/// `Θ_AA − Θ_AC Θ_CC⁻¹ Θ_CA` for `A = block`, `C` its complement.
pub fn schur_complement(theta: &DMatrix<f64>, block: &[usize]) -> Result<DMatrix<f64>> {
    let p = theta.nrows();
    if block.is_empty() || block.iter().any(|&i| i >= p) {
        return Err(QuiltError::InvalidInput("block must be nonempty and in range".into()));
    }
    let in_block: BTreeSet<usize> = block.iter().copied().collect();
    let rest: Vec<usize> = (0..p).filter(|i| !in_block.contains(i)).collect();
    let taa = principal(theta, block);
    if rest.is_empty() {
        return Ok(taa);
    }
    let tac = submatrix(theta, block, &rest);
    let tcc = principal(theta, &rest);
    let chol = tcc.cholesky().ok_or_else(|| {
        QuiltError::NotPositiveDefinite("complement block of the precision matrix".into())
    })?;
    let solved = chol.solve(&tac.transpose());
    let mut out = taa - tac * solved;
    crate::linalg::symmetrize(&mut out);
    Ok(out)
}

/// Observed off-diagonal pairs with `|Θ_ij| > tau1`.
pub fn threshold_edges_o(theta: &DMatrix<f64>, mask: &PairMask, tau1: f64) -> EdgeSet {
    let mut edges = EdgeSet::new(mask.p());
    for (i, j) in mask.observed_pairs() {
        if theta[(i, j)].abs() > tau1 {
            edges.insert(i, j).expect("observed pair is in range");
        }
    }
    edges
}

/// Nodes that, for every block holding them, have a partner in that block
/// whose Schur entry lies strictly between `lower` and `upper`.
pub fn superset_nodes(
    schur_complements: &[DMatrix<f64>],
    design: &BlockDesign,
    lower: f64,
    upper: f64,
) -> Result<BTreeSet<usize>> {
    if schur_complements.len() != design.num_blocks() {
        return Err(QuiltError::DimensionMismatch {
            expected: design.num_blocks(),
            found: schur_complements.len(),
        });
    }
    let mut nodes = BTreeSet::new();
    for i in 0..design.p() {
        let holding = design.blocks_containing(i);
        let flagged = !holding.is_empty()
            && holding.iter().all(|&k| {
                let block = design.block(k);
                let a = block.iter().position(|&v| v == i).expect("node in block");
                let s = &schur_complements[k];
                (0..block.len()).any(|b| {
                    let x = s[(a, b)].abs();
                    b != a && x > lower && x < upper
                })
            });
        if flagged {
            nodes.insert(i);
        }
    }
    Ok(nodes)
}

/// Unobserved pairs with both ends in `nodes`.
pub fn superset_edges(nodes: &BTreeSet<usize>, mask: &PairMask) -> EdgeSet {
    let mut edges = EdgeSet::new(mask.p());
    for (i, j) in mask.unobserved_pairs() {
        if nodes.contains(&i) && nodes.contains(&j) {
            edges.insert(i, j).expect("pair in range");
        }
    }
    edges
}

/// Output of the full procedure, with its intermediates.
#[derive(Debug, Clone)]
pub struct QuiltResult {
    pub edges_o: EdgeSet,
    pub edges_oc_superset: EdgeSet,
    pub node_set_w: BTreeSet<usize>,
    pub theta_hat: PrecisionEstimate,
    pub schur_complements: Vec<DMatrix<f64>>,
    pub thresholds: MadgqThresholds,
}

impl QuiltResult {
    /// Union of the observed-pair edges and the unobserved-pair superset.
    pub fn edges(&self) -> EdgeSet {
        self.edges_o.union(&self.edges_oc_superset)
    }
}

/// The constrained fit and its Schur complements, reusable across thresholds.
#[derive(Debug, Clone)]
pub struct MadgqFit {
    pub design: BlockDesign,
    pub mask: PairMask,
    pub theta_hat: PrecisionEstimate,
    pub schur_complements: Vec<DMatrix<f64>>,
    pub report: SolveReport,
}

impl MadgqFit {
    /// Applies the thresholds.
    pub fn quilt(&self, thresholds: MadgqThresholds) -> Result<QuiltResult> {
        let edges_o = threshold_edges_o(self.theta_hat.theta(), &self.mask, thresholds.tau1);
        let node_set_w = superset_nodes(
            &self.schur_complements,
            &self.design,
            thresholds.tau2,
            thresholds.tau1,
        )?;
        let edges_oc_superset = superset_edges(&node_set_w, &self.mask);
        Ok(QuiltResult {
            edges_o,
            edges_oc_superset,
            node_set_w,
            theta_hat: self.theta_hat.clone(),
            schur_complements: self.schur_complements.clone(),
            thresholds,
        })
    }
}

/// Solves the penalized problem with unobserved pairs forced to zero and
/// computes every block's Schur complement.
pub fn fit_madgq(
    design: &BlockDesign,
    sigma: &MaskedCorrelation,
    penalty: &PenaltyMatrix,
    options: &SolverOptions,
) -> Result<MadgqFit> {
    if sigma.p() != design.p() {
        return Err(QuiltError::DimensionMismatch {
            expected: design.p(),
            found: sigma.p(),
        });
    }
    let mask = design.pair_mask();
    let zero = EdgeSet::from_pairs(design.p(), mask.unobserved_pairs())?;
    let mut opts = options.clone();
    opts.zero_constraint = if zero.is_empty() { None } else { Some(zero) };
    let (theta_hat, report) = glasso::solve_with_report(sigma.values(), penalty, &opts)?;
    let schur_complements = design
        .blocks()
        .iter()
        .map(|b| schur_complement(theta_hat.theta(), b))
        .collect::<Result<Vec<_>>>()?;
    Ok(MadgqFit {
        design: design.clone(),
        mask,
        theta_hat,
        schur_complements,
        report,
    })
}

/// Full procedure on a masked correlation estimate.
pub fn run_madgq(
    design: &BlockDesign,
    sigma: &MaskedCorrelation,
    penalty: &PenaltyMatrix,
    thresholds: MadgqThresholds,
    options: &SolverOptions,
) -> Result<QuiltResult> {
    fit_madgq(design, sigma, penalty, options)?.quilt(thresholds)
}

/// Full procedure starting from per-block data.
pub fn run_madgq_on_blocks(
    design: &BlockDesign,
    blocks: &[DMatrix<f64>],
    correlation: &CorrelationOptions,
    penalty: &PenaltyMatrix,
    thresholds: MadgqThresholds,
    options: &SolverOptions,
) -> Result<QuiltResult> {
    let sigma = estimate_correlation(design, blocks, correlation)?;
    run_madgq(design, &sigma, penalty, thresholds, options)
}

/// Population quantities of a true precision matrix under a design.
#[derive(Debug, Clone)]
pub struct PopulationDiagnostics {
    /// Constrained max-determinant solution from the true covariance on the
    /// observed pairs.
    pub theta_tilde: DMatrix<f64>,
    /// Its Schur complement for every block.
    pub schur_tilde: Vec<DMatrix<f64>>,
    /// Smallest true edge magnitude on observed pairs; `None` without edges.
    pub nu: Option<f64>,
    /// Largest `|Θ_ij − Θ̃_ij|` over observed off-diagonal pairs.
    pub delta: f64,
    /// Smallest margin `min(|x|, δ − |x|)` over Schur entries with
    /// `0 < |x| < δ`; `None` when there are none.
    pub psi: Option<f64>,
    /// Largest row support size of `Θ`, diagonal included.
    pub d: usize,
    /// Largest row support size of `Θ̃`, diagonal included.
    pub d_tilde: usize,
    /// Number of nonzero off-diagonal entries of `Θ̃` (both triangles).
    pub s_tilde: usize,
    /// `λ_max(Θ̃) / λ_min(Θ̃)`.
    pub kappa_tilde: f64,
    /// Max absolute row sum of `Σ̃ = Θ̃⁻¹`.
    pub kappa_sigma_tilde: f64,
    /// Max absolute row sum of `(Γ_SS)⁻¹`, `Γ = Σ̃ ⊗ Σ̃`, `S` the support of `Θ̃`.
    pub kappa_gamma_tilde: f64,
    /// `1 − max_{e ∈ O \ S} ‖Γ_eS Γ_SS⁻¹‖₁`; the incoherence margin.
    pub alpha: f64,
    pub true_edges_o: EdgeSet,
    pub true_edges_oc: EdgeSet,
}

impl PopulationDiagnostics {
    /// Distortion below half the minimum signal.
    pub fn weak_distortion_holds(&self) -> bool {
        match self.nu {
            Some(nu) => self.delta < nu / 2.0,
            None => true,
        }
    }

    /// The minimal superset: unobserved pairs among nodes whose Schur rows
    /// have an entry in `(0, δ)` in every block holding them.
    pub fn minimal_superset(&self, design: &BlockDesign) -> Result<EdgeSet> {
        let nodes = superset_nodes(&self.schur_tilde, design, POPULATION_ZERO, self.delta)?;
        Ok(superset_edges(&nodes, &design.pair_mask()))
    }

    /// The recovery threshold window `(δ, ν − δ)` for edges on observed pairs.
    pub fn tau1_window(&self) -> Option<(f64, f64)> {
        self.nu.map(|nu| (self.delta, nu - self.delta))
    }
}

/// Unpenalized solve with unobserved pairs pinned to zero, at population
/// accuracy, for any positive definite covariance (not only correlations).
pub fn population_solve(sigma: &DMatrix<f64>, mask: &PairMask) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    let mut observed = sigma.clone();
    for (i, j) in mask.unobserved_pairs() {
        observed[(i, j)] = 0.0;
        observed[(j, i)] = 0.0;
    }
    let zero = EdgeSet::from_pairs(p, mask.unobserved_pairs())?;
    let options = SolverOptions {
        max_iterations: 100_000,
        tolerance: POPULATION_TOLERANCE,
        zero_constraint: if zero.is_empty() { None } else { Some(zero) },
        record_trace: false,
    };
    let est = glasso::solve(&observed, &PenaltyMatrix::uniform(p, 0.0)?, &options)?;
    Ok(est.theta().clone())
}

/// Computes every population quantity from the true precision matrix.
pub fn population_diagnostics(theta_true: &DMatrix<f64>, design: &BlockDesign) -> Result<PopulationDiagnostics> {
    let p = design.p();
    if theta_true.nrows() != p || theta_true.ncols() != p {
        return Err(QuiltError::DimensionMismatch {
            expected: p,
            found: theta_true.nrows(),
        });
    }
    let sigma = inverse_spd(theta_true)?;
    let mask = design.pair_mask();
    let theta_tilde = population_solve(&sigma, &mask)?;
    let schur_tilde = design
        .blocks()
        .iter()
        .map(|b| schur_complement(&theta_tilde, b))
        .collect::<Result<Vec<_>>>()?;

    let truth = EdgeSet::from_support(theta_true, ZERO_SNAP);
    let true_edges_o = truth.restrict(&mask, true);
    let true_edges_oc = truth.restrict(&mask, false);
    let nu = true_edges_o
        .iter()
        .map(|(i, j)| theta_true[(i, j)].abs())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));
    let delta = mask
        .observed_pairs()
        .map(|(i, j)| (theta_true[(i, j)] - theta_tilde[(i, j)]).abs())
        .fold(0.0, f64::max);
    let mut psi: Option<f64> = None;
    for s in &schur_tilde {
        for a in 0..s.nrows() {
            for b in 0..s.ncols() {
                let x = s[(a, b)].abs();
                if a != b && x > POPULATION_ZERO && x < delta {
                    let m = x.min(delta - x);
                    psi = Some(psi.map_or(m, |v| v.min(m)));
                }
            }
        }
    }
    let row_support = |m: &DMatrix<f64>| {
        (0..p)
            .map(|i| m.row(i).iter().filter(|v| v.abs() > POPULATION_ZERO).count())
            .max()
            .unwrap_or(0)
    };
    let d = row_support(theta_true);
    let d_tilde = row_support(&theta_tilde);
    let mut s_tilde = 0;
    for i in 0..p {
        for j in 0..p {
            if i != j && theta_tilde[(i, j)].abs() > POPULATION_ZERO {
                s_tilde += 1;
            }
        }
    }
    let ev = sym_eigenvalues(&theta_tilde);
    let kappa_tilde = ev[p - 1] / ev[0];
    let sigma_tilde = inverse_spd(&theta_tilde)?;
    let kappa_sigma_tilde = max_row_abs_sum(&sigma_tilde);
    let (kappa_gamma_tilde, alpha) = incoherence(&sigma_tilde, &theta_tilde, &mask)?;

    Ok(PopulationDiagnostics {
        theta_tilde,
        schur_tilde,
        nu,
        delta,
        psi,
        d,
        d_tilde,
        s_tilde,
        kappa_tilde,
        kappa_sigma_tilde,
        kappa_gamma_tilde,
        alpha,
        true_edges_o,
        true_edges_oc,
    })
}

/// `(|||Γ_SS⁻¹|||_∞, 1 − max_{e ∈ O \ S} ‖Γ_eS Γ_SS⁻¹‖₁)` with `Γ = Σ̃ ⊗ Σ̃`
/// indexed by ordered pairs, `Γ_(j,l),(m,n) = Σ̃_jm Σ̃_ln`.
fn incoherence(sigma_tilde: &DMatrix<f64>, theta_tilde: &DMatrix<f64>, mask: &PairMask) -> Result<(f64, f64)> {
    let p = sigma_tilde.nrows();
    let mut support = Vec::new();
    let mut outside = Vec::new();
    for j in 0..p {
        for l in 0..p {
            if theta_tilde[(j, l)].abs() > POPULATION_ZERO {
                support.push((j, l));
            } else if mask.is_observed(j, l) {
                outside.push((j, l));
            }
        }
    }
    let gamma = |e: (usize, usize), f: (usize, usize)| sigma_tilde[(e.0, f.0)] * sigma_tilde[(e.1, f.1)];
    let gss = DMatrix::from_fn(support.len(), support.len(), |a, b| gamma(support[a], support[b]));
    let gss_inv = gss
        .try_inverse()
        .ok_or_else(|| QuiltError::NotPositiveDefinite("Γ_SS is singular".into()))?;
    let kappa_gamma = max_row_abs_sum(&gss_inv);
    let mut worst = 0.0_f64;
    for &e in &outside {
        let row = DMatrix::from_fn(1, support.len(), |_, b| gamma(e, support[b]));
        let prod = row * &gss_inv;
        worst = worst.max(prod.iter().map(|v| v.abs()).sum());
    }
    Ok((kappa_gamma, 1.0 - worst))
}

/// Outcome of checking the population assumptions on an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// `δ < ν / 2`.
    pub weak_distortion: bool,
    /// Every node with an unobserved-pair neighbour reaches it from each of its
    /// blocks through unobserved-pair nodes.
    pub connectivity: bool,
    /// Every distorted Schur row has an entry in `(0, δ)`.
    pub small_distortion_visible: bool,
}

impl AssumptionReport {
    pub fn all(&self) -> bool {
        self.weak_distortion && self.connectivity && self.small_distortion_visible
    }
}

/// Checks the three structural assumptions behind exact recovery.
pub fn check_assumptions(
    theta_true: &DMatrix<f64>,
    design: &BlockDesign,
    diag: &PopulationDiagnostics,
) -> AssumptionReport {
    AssumptionReport {
        weak_distortion: diag.weak_distortion_holds(),
        connectivity: connectivity_assumption(theta_true, design),
        small_distortion_visible: distortion_visibility(theta_true, design, diag),
    }
}

fn connectivity_assumption(theta_true: &DMatrix<f64>, design: &BlockDesign) -> bool {
    let p = design.p();
    let mask = design.pair_mask();
    let adjacency = EdgeSet::from_support(theta_true, ZERO_SNAP).neighbors();
    for i in 0..p {
        let hidden: BTreeSet<usize> = (0..p).filter(|&j| j != i && !mask.is_observed(i, j)).collect();
        let targets: BTreeSet<usize> = adjacency[i].iter().copied().filter(|j| hidden.contains(j)).collect();
        if targets.is_empty() {
            continue;
        }
        for k in design.blocks_containing(i) {
            let reachable = design.block(k).iter().any(|&start| {
                start != i && {
                    let mut seen = BTreeSet::from([start]);
                    let mut queue = VecDeque::from([start]);
                    let mut hit = false;
                    while let Some(u) = queue.pop_front() {
                        if targets.contains(&u) {
                            hit = true;
                            break;
                        }
                        for &v in &adjacency[u] {
                            if hidden.contains(&v) && seen.insert(v) {
                                queue.push_back(v);
                            }
                        }
                    }
                    hit
                }
            });
            if !reachable {
                return false;
            }
        }
    }
    true
}

fn distortion_visibility(theta_true: &DMatrix<f64>, design: &BlockDesign, diag: &PopulationDiagnostics) -> bool {
    for (k, block) in design.blocks().iter().enumerate() {
        let s = &diag.schur_tilde[k];
        for a in 0..block.len() {
            let distorted = (0..block.len())
                .any(|b| b != a && (theta_true[(block[a], block[b])] - s[(a, b)]).abs() > POPULATION_ZERO);
            if distorted {
                let visible = (0..block.len()).any(|b| {
                    let x = s[(a, b)].abs();
                    b != a && x > POPULATION_ZERO && x < diag.delta
                });
                if !visible {
                    return false;
                }
            }
        }
    }
    true
}
