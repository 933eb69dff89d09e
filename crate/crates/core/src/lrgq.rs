//! Low-rank completion of a block-observed correlation matrix, followed by
//! the graphical lasso.
//!
//! Each block's correlation, minus a noise floor, is factored through its top
//! `r` eigenpairs. Blocks are processed in design order; every new factor is
//! rotated onto the rows already placed using an orthogonal Procrustes fit on
//! the shared variables, after which the shared rows keep their earlier
//! values. The product of the merged factor with its transpose fills the
//! pairs that were never observed together.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{QuiltError, Result};
use crate::glasso::{self, PenaltyMatrix, SolveReport, SolverOptions};
use crate::linalg::{principal, sym_eigen_desc};
use crate::rank_corr::{clip_to_correlation, estimate_correlation, CorrelationOptions, DEFAULT_RIDGE};
use crate::types::{BlockDesign, EdgeSet, MaskedCorrelation, PrecisionEstimate, ZERO_SNAP};

/// How the noise floor `q̂` subtracted before factoring is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorEstimator {
    /// Median of the input diagonal. On a correlation matrix this is always 1.
    Diagonal,
    /// Median of the eigenvalues of the block submatrices left after removing
    /// each block's top `r`.
    #[default]
    BlockEigen,
}

/// What the completed matrix handed to the graphical lasso contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionFill {
    /// Observed pairs from the input, unobserved pairs from `CCᵀ`, unit
    /// diagonal.
    #[default]
    ObservedWithLowRank,
    /// `CCᵀ + q̂ I` everywhere.
    LowRankPlusFloor,
    /// `CCᵀ` everywhere.
    LowRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsvdOptions {
    pub floor: FloorEstimator,
    pub fill: CompletionFill,
    /// Eigenvalue floor when the completed matrix has to be repaired.
    pub ridge: f64,
}

impl Default for BsvdOptions {
    fn default() -> Self {
        Self {
            floor: FloorEstimator::default(),
            fill: CompletionFill::default(),
            ridge: DEFAULT_RIDGE,
        }
    }
}

/// Merged `p × r` factor and the floor used.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactor {
    pub c: DMatrix<f64>,
    pub q_hat: f64,
}

impl LowRankFactor {
    pub fn rank(&self) -> usize {
        self.c.ncols()
    }

    /// `CCᵀ`.
    pub fn low_rank(&self) -> DMatrix<f64> {
        &self.c * self.c.transpose()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// The floor `q̂` under the chosen estimator.
pub fn estimate_floor(masked: &MaskedCorrelation, design: &BlockDesign, r: usize, estimator: FloorEstimator) -> f64 {
    match estimator {
        FloorEstimator::Diagonal => {
            let mut d: Vec<f64> = masked.values().diagonal().iter().copied().collect();
            median(&mut d)
        }
        FloorEstimator::BlockEigen => {
            let mut pooled = Vec::new();
            for block in design.blocks() {
                let (vals, _) = sym_eigen_desc(&principal(masked.values(), block));
                pooled.extend(vals.into_iter().skip(r));
            }
            if pooled.is_empty() {
                0.0
            } else {
                median(&mut pooled).max(0.0)
            }
        }
    }
}

/// Top-`r` factor `U_h Λ_h^{1/2}` of a symmetric matrix, negative eigenvalues
/// clipped to zero.
fn top_factor(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(m);
    DMatrix::from_fn(m.nrows(), r, |i, c| vecs[(i, c)] * vals[c].max(0.0).sqrt())
}

/// Merges block factors into a `p × r` factor of `Σ̂ − q̂ I`.
pub fn bsvd_factor(masked: &MaskedCorrelation, design: &BlockDesign, r: usize, floor: FloorEstimator) -> Result<LowRankFactor> {
    let p = design.p();
    if masked.p() != p {
        return Err(QuiltError::DimensionMismatch {
            expected: p,
            found: masked.p(),
        });
    }
    if r == 0 {
        return Err(QuiltError::InvalidInput("rank must be at least 1".into()));
    }
    if let Some((k, b)) = design.blocks().iter().enumerate().find(|(_, b)| b.len() < r) {
        return Err(QuiltError::InvalidInput(format!(
            "block {k} has {} variables, fewer than rank {r}",
            b.len()
        )));
    }
    let q_hat = estimate_floor(masked, design, r, floor);
    let shifted = masked.values() - DMatrix::identity(p, p) * q_hat;

    let mut c = DMatrix::zeros(p, r);
    let mut covered = vec![false; p];
    for (s, block) in design.blocks().iter().enumerate() {
        let d = top_factor(&principal(&shifted, block), r);
        if s == 0 {
            for (a, &i) in block.iter().enumerate() {
                c.set_row(i, &d.row(a));
                covered[i] = true;
            }
            continue;
        }
        let local: Vec<usize> = (0..block.len()).filter(|&a| covered[block[a]]).collect();
        if local.len() < r {
            return Err(QuiltError::UnderdeterminedMerge {
                block: s,
                overlap: local.len(),
                rank: r,
            });
        }
        let d_j = DMatrix::from_fn(local.len(), r, |a, b| d[(local[a], b)]);
        let c_e = DMatrix::from_fn(local.len(), r, |a, b| c[(block[local[a]], b)]);
        let svd = (d_j.transpose() * &c_e).svd(true, true);
        let (w, ut) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
        let rotated = &d * w * ut;
        for (a, &i) in block.iter().enumerate() {
            if !covered[i] {
                c.set_row(i, &rotated.row(a));
                covered[i] = true;
            }
        }
    }
    Ok(LowRankFactor { c, q_hat })
}

/// Completes the masked correlation and returns the matrix to feed the
/// graphical lasso with the factor behind it.
pub fn bsvd_complete(
    masked: &MaskedCorrelation,
    design: &BlockDesign,
    r: usize,
    options: &BsvdOptions,
) -> Result<(DMatrix<f64>, LowRankFactor)> {
    let factor = bsvd_factor(masked, design, r, options.floor)?;
    let low = factor.low_rank();
    let p = design.p();
    let completed = match options.fill {
        CompletionFill::ObservedWithLowRank => {
            let mask = masked.mask();
            let filled = DMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    1.0
                } else if mask.is_observed(i, j) {
                    masked.get(i, j)
                } else {
                    (0.5 * (low[(i, j)] + low[(j, i)])).clamp(-1.0, 1.0)
                }
            });
            clip_to_correlation(&filled, options.ridge)
        }
        CompletionFill::LowRankPlusFloor => {
            let mut m = low.clone() + DMatrix::identity(p, p) * factor.q_hat;
            crate::linalg::symmetrize(&mut m);
            m
        }
        CompletionFill::LowRank => {
            let mut m = low.clone();
            crate::linalg::symmetrize(&mut m);
            m
        }
    };
    Ok((completed, factor))
}

/// Result of the low-rank pipeline.
#[derive(Debug, Clone)]
pub struct LrgqResult {
    pub theta: PrecisionEstimate,
    pub edges: EdgeSet,
    pub rank: usize,
    pub factor: LowRankFactor,
    pub completed: DMatrix<f64>,
    pub report: SolveReport,
}

/// Completion followed by the unconstrained graphical lasso.
pub fn run_lrgq(
    design: &BlockDesign,
    sigma: &MaskedCorrelation,
    r: usize,
    penalty: &PenaltyMatrix,
    bsvd: &BsvdOptions,
    solver: &SolverOptions,
) -> Result<LrgqResult> {
    let (completed, factor) = bsvd_complete(sigma, design, r, bsvd)?;
    let (theta, report) = glasso::solve_with_report(&completed, penalty, &unconstrained(solver))?;
    let edges = EdgeSet::from_support(theta.theta(), ZERO_SNAP);
    Ok(LrgqResult {
        theta,
        edges,
        rank: r,
        factor,
        completed,
        report,
    })
}

/// [`run_lrgq`] from per-block data.
pub fn run_lrgq_on_blocks(
    design: &BlockDesign,
    blocks: &[DMatrix<f64>],
    correlation: &CorrelationOptions,
    r: usize,
    penalty: &PenaltyMatrix,
    bsvd: &BsvdOptions,
    solver: &SolverOptions,
) -> Result<LrgqResult> {
    let sigma = estimate_correlation(design, blocks, correlation)?;
    run_lrgq(design, &sigma, r, penalty, bsvd, solver)
}

fn unconstrained(solver: &SolverOptions) -> SolverOptions {
    SolverOptions {
        zero_constraint: None,
        ..solver.clone()
    }
}

/// The zero-filled correlation, repaired to be positive definite if needed.
pub fn zero_filled(masked: &MaskedCorrelation, ridge: f64) -> DMatrix<f64> {
    clip_to_correlation(masked.values(), ridge)
}

/// Baseline: graphical lasso on the zero-filled correlation.
pub fn zero_impute_baseline(
    masked: &MaskedCorrelation,
    penalty: &PenaltyMatrix,
    ridge: f64,
    solver: &SolverOptions,
) -> Result<(PrecisionEstimate, EdgeSet)> {
    let filled = zero_filled(masked, ridge);
    let theta = glasso::solve(&filled, penalty, &unconstrained(solver))?;
    let edges = EdgeSet::from_support(theta.theta(), ZERO_SNAP);
    Ok((theta, edges))
}
