//! Graphical lasso with optional hard zero constraints.
//!
//! Maximizes `log det Θ − ⟨S, Θ⟩ − Σ_{i≠j} Λ_ij |Θ_ij|` over positive definite
//! `Θ`, optionally with `Θ_ij = 0` forced on a given set of pairs. The solver
//! is block coordinate ascent on the working covariance `W = Θ⁻¹`, one column
//! at a time; each column update is a lasso solved by coordinate descent and
//! finished with an exact active-set solve. Constrained coordinates are pinned
//! at zero in every column problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QuiltError, Result};
use crate::linalg::{inverse_spd, log_det_spd};
use crate::types::{BlockDesign, EdgeSet, MaskedCorrelation, PrecisionEstimate};

/// Symmetric nonnegative off-diagonal penalty weights. The diagonal is never
/// penalized and is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    values: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let p = values.nrows();
        if values.ncols() != p {
            return Err(QuiltError::DimensionMismatch {
                expected: p,
                found: values.ncols(),
            });
        }
        for i in 0..p {
            for j in 0..p {
                let v = values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(QuiltError::InvalidInput(format!(
                        "penalty entry ({i}, {j}) = {v} is not a finite nonnegative number"
                    )));
                }
                if v != values[(j, i)] {
                    return Err(QuiltError::Asymmetric((v - values[(j, i)]).abs()));
                }
            }
        }
        Ok(Self { values })
    }

    /// The same `lambda` on every off-diagonal pair.
    pub fn uniform(p: usize, lambda: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(p, p, lambda))
    }

    /// `C₀ √(log p / n_jl)` with `n_jl` the joint sample size of the pair.
    /// Pairs never observed together use the smallest block sample size.
    pub fn per_pair(design: &BlockDesign, c0: f64) -> Result<Self> {
        let p = design.p();
        let joint = design.joint_sample_sizes();
        let fallback = design.min_sample_size() as f64;
        let logp = (p as f64).ln();
        let values = DMatrix::from_fn(p, p, |i, j| {
            let n = if joint[(i, j)] > 0.0 { joint[(i, j)] } else { fallback };
            c0 * (logp / n).sqrt()
        });
        Self::new(values)
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.values * factor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm change of `W` over one sweep.
    pub tolerance: f64,
    /// Pairs forced to exactly zero in `Θ`.
    pub zero_constraint: Option<EdgeSet>,
    /// Record `log det W` after every sweep.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            tolerance: 1e-6,
            zero_constraint: None,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    pub fn with_zero_constraint(mut self, pairs: EdgeSet) -> Self {
        self.zero_constraint = Some(pairs);
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }
}

/// Convergence details of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub sweeps: usize,
    pub last_change: f64,
    /// `tr(SΘ) − p + Σ Λ_ij |Θ_ij|`, zero at the optimum.
    pub duality_gap: f64,
    /// `log det W` after each sweep when requested. This is the dual
    /// objective and never decreases once every column has been visited.
    pub dual_trace: Vec<f64>,
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Lasso `min ½ βᵀVβ − sᵀβ + Σ λ_k |β_k|` with pinned coordinates held at 0.
/// `beta` is the warm start and receives the solution.
fn column_lasso(
    v: &DMatrix<f64>,
    s: &DVector<f64>,
    lambda: &[f64],
    free: &[bool],
    beta: &mut DVector<f64>,
    tol: f64,
) {
    let m = s.len();
    for k in 0..m {
        if !free[k] {
            beta[k] = 0.0;
        }
    }
    let mut vb = v * &*beta;
    let mut last_signs: Vec<i8> = Vec::new();
    for _ in 0..10_000 {
        let mut max_delta = 0.0_f64;
        for k in 0..m {
            if !free[k] {
                continue;
            }
            let old = beta[k];
            let z = s[k] - (vb[k] - v[(k, k)] * old);
            let new = soft_threshold(z, lambda[k]) / v[(k, k)];
            if new != old {
                let d = new - old;
                vb.axpy(d, &v.column(k), 1.0);
                beta[k] = new;
                max_delta = max_delta.max(d.abs() * v[(k, k)].sqrt());
            }
        }
        let signs: Vec<i8> = beta.iter().map(|&b| sign_i8(b)).collect();
        if signs == last_signs && polish(v, s, lambda, free, beta, &signs) {
            return;
        }
        if max_delta < tol {
            return;
        }
        last_signs = signs;
    }
}

fn sign_i8(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Smallest admissible `w_jj − w_12ᵀV⁻¹w_12`, relative to `w_jj`.
const DEFINITENESS_MARGIN: f64 = 1e-8;

/// Moves from `w_old` toward `w_new` only as far as keeps the working
/// covariance positive definite. Returns the new column and `V⁻¹` times it.
fn damped_step(
    v: &DMatrix<f64>,
    w_jj: f64,
    w_old: &DVector<f64>,
    w_new: &DVector<f64>,
    beta_new: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let chol = v
        .clone()
        .cholesky()
        .ok_or_else(|| QuiltError::NotPositiveDefinite("working covariance lost definiteness".into()))?;
    let x_old = chol.solve(w_old);
    let (a, b, c) = (w_old.dot(&x_old), w_old.dot(beta_new), w_new.dot(beta_new));
    let limit = w_jj * (1.0 - 1e-3);
    let mut alpha = 1.0_f64;
    for _ in 0..60 {
        alpha *= 0.5;
        let g = (1.0 - alpha).powi(2) * a + 2.0 * alpha * (1.0 - alpha) * b + alpha * alpha * c;
        if g < limit {
            return Ok((
                w_old * (1.0 - alpha) + w_new * alpha,
                x_old * (1.0 - alpha) + beta_new * alpha,
            ));
        }
    }
    Ok((w_old.clone(), x_old))
}

/// Solves the lasso stationarity equations on the current sign pattern and
/// accepts the result only if the signs and the inactive-set conditions hold.
fn polish(
    v: &DMatrix<f64>,
    s: &DVector<f64>,
    lambda: &[f64],
    free: &[bool],
    beta: &mut DVector<f64>,
    signs: &[i8],
) -> bool {
    let active: Vec<usize> = (0..s.len()).filter(|&k| signs[k] != 0).collect();
    let mut x = DVector::zeros(s.len());
    if !active.is_empty() {
        let vaa = DMatrix::from_fn(active.len(), active.len(), |a, b| v[(active[a], active[b])]);
        let rhs = DVector::from_fn(active.len(), |a, _| {
            let k = active[a];
            s[k] - lambda[k] * signs[k] as f64
        });
        let Some(chol) = vaa.cholesky() else {
            return false;
        };
        let sol = chol.solve(&rhs);
        for (a, &k) in active.iter().enumerate() {
            if sign_i8(sol[a]) != signs[k] {
                return false;
            }
            x[k] = sol[a];
        }
    }
    let vx = v * &x;
    for k in 0..s.len() {
        if free[k] && signs[k] == 0 && (s[k] - vx[k]).abs() > lambda[k] + 1e-12 {
            return false;
        }
    }
    beta.copy_from(&x);
    true
}

fn check_sigma(sigma: &DMatrix<f64>, penalty: &PenaltyMatrix) -> Result<()> {
    let p = sigma.nrows();
    if sigma.ncols() != p {
        return Err(QuiltError::DimensionMismatch {
            expected: p,
            found: sigma.ncols(),
        });
    }
    if penalty.p() != p {
        return Err(QuiltError::DimensionMismatch {
            expected: p,
            found: penalty.p(),
        });
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(QuiltError::InvalidInput("non-finite covariance entry".into()));
    }
    let mut asym = 0.0_f64;
    for i in 0..p {
        if sigma[(i, i)] <= 0.0 {
            return Err(QuiltError::InvalidInput(format!(
                "non-positive diagonal entry {} at {i}",
                sigma[(i, i)]
            )));
        }
        for j in (i + 1)..p {
            asym = asym.max((sigma[(i, j)] - sigma[(j, i)]).abs());
        }
    }
    if asym > 1e-12 {
        return Err(QuiltError::Asymmetric(asym));
    }
    Ok(())
}

fn constraint_matrix(p: usize, zero: Option<&EdgeSet>) -> Result<Vec<bool>> {
    let mut pinned = vec![false; p * p];
    if let Some(set) = zero {
        if set.p() != p {
            return Err(QuiltError::DimensionMismatch {
                expected: p,
                found: set.p(),
            });
        }
        for (i, j) in set.iter() {
            pinned[i * p + j] = true;
            pinned[j * p + i] = true;
        }
    }
    Ok(pinned)
}

/// Solves the penalized problem and returns the estimate.
pub fn solve(
    sigma: &DMatrix<f64>,
    penalty: &PenaltyMatrix,
    options: &SolverOptions,
) -> Result<PrecisionEstimate> {
    solve_with_report(sigma, penalty, options).map(|(est, _)| est)
}

/// [`solve`] plus convergence details.
pub fn solve_with_report(
    sigma: &DMatrix<f64>,
    penalty: &PenaltyMatrix,
    options: &SolverOptions,
) -> Result<(PrecisionEstimate, SolveReport)> {
    check_sigma(sigma, penalty)?;
    if !(options.tolerance > 0.0) {
        return Err(QuiltError::InvalidInput("tolerance must be positive".into()));
    }
    if options.max_iterations == 0 {
        return Err(QuiltError::InvalidInput("max_iterations must be positive".into()));
    }
    let p = sigma.nrows();
    let pinned = constraint_matrix(p, options.zero_constraint.as_ref())?;

    if p == 1 {
        let theta = DMatrix::from_element(1, 1, 1.0 / sigma[(0, 0)]);
        let report = SolveReport {
            sweeps: 0,
            last_change: 0.0,
            duality_gap: 0.0,
            dual_trace: Vec::new(),
        };
        return Ok((PrecisionEstimate::new(theta)?, report));
    }

    // S itself is dual feasible; when it is indefinite, start from its
    // diagonal and let damped column steps reach the feasible box
    let mut w = if sigma.clone().cholesky().is_some() {
        sigma.clone()
    } else {
        DMatrix::from_diagonal(&sigma.diagonal())
    };
    // column j of `betas` holds the lasso coefficients of column j (length p − 1)
    let mut betas = DMatrix::<f64>::zeros(p - 1, p);
    let inner_tol = options.tolerance * 1e-3;
    let mut trace = Vec::new();
    let mut last_change = f64::INFINITY;
    let mut converged = false;
    let mut sweeps = 0;

    let others: Vec<Vec<usize>> = (0..p).map(|j| (0..p).filter(|&i| i != j).collect()).collect();

    while sweeps < options.max_iterations {
        sweeps += 1;
        let mut change = 0.0_f64;
        for j in 0..p {
            let idx = &others[j];
            let v = DMatrix::from_fn(p - 1, p - 1, |a, b| w[(idx[a], idx[b])]);
            let s12 = DVector::from_fn(p - 1, |a, _| sigma[(idx[a], j)]);
            let lambda: Vec<f64> = idx.iter().map(|&i| penalty.get(i, j)).collect();
            let free: Vec<bool> = idx.iter().map(|&i| !pinned[i * p + j]).collect();
            let mut beta = betas.column(j).into_owned();
            column_lasso(&v, &s12, &lambda, &free, &mut beta, inner_tol);
            let mut w12 = &v * &beta;
            if sigma[(j, j)] - w12.dot(&beta) <= DEFINITENESS_MARGIN * sigma[(j, j)] {
                let w_old = DVector::from_fn(p - 1, |a, _| w[(idx[a], j)]);
                (w12, beta) = damped_step(&v, sigma[(j, j)], &w_old, &w12, &beta)?;
            }
            for (a, &i) in idx.iter().enumerate() {
                change = change.max((w[(i, j)] - w12[a]).abs());
                w[(i, j)] = w12[a];
                w[(j, i)] = w12[a];
            }
            betas.set_column(j, &beta);
        }
        if options.record_trace {
            trace.push(log_det_spd(&w).unwrap_or(f64::NEG_INFINITY));
        }
        last_change = change;
        if change < options.tolerance {
            converged = true;
            break;
        }
    }

    let theta = assemble_theta(&w, &betas, &others)?;
    let gap = duality_gap(sigma, penalty, &theta);
    if !converged {
        return Err(QuiltError::NonConvergence {
            iterations: sweeps,
            last_change,
            duality_gap: gap,
        });
    }
    let estimate = PrecisionEstimate::new(theta)?;
    let gap = duality_gap(sigma, penalty, estimate.theta());
    Ok((
        estimate,
        SolveReport {
            sweeps,
            last_change,
            duality_gap: gap,
            dual_trace: trace,
        },
    ))
}

/// `Θ` from the final working covariance and column coefficients:
/// `θ_jj = 1 / (w_jj − w_12ᵀβ)`, `θ_12 = −β θ_jj`. The two triangles are
/// averaged, and a pair that is exactly zero on either side is zero on both.
fn assemble_theta(w: &DMatrix<f64>, betas: &DMatrix<f64>, others: &[Vec<usize>]) -> Result<DMatrix<f64>> {
    let p = w.nrows();
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        let idx = &others[j];
        let mut dot = 0.0;
        for (a, &i) in idx.iter().enumerate() {
            dot += w[(i, j)] * betas[(a, j)];
        }
        let denom = w[(j, j)] - dot;
        if !(denom > 0.0) {
            return Err(QuiltError::NotPositiveDefinite(format!(
                "working covariance lost definiteness at column {j}"
            )));
        }
        let tjj = 1.0 / denom;
        theta[(j, j)] = tjj;
        for (a, &i) in idx.iter().enumerate() {
            theta[(i, j)] = -betas[(a, j)] * tjj;
        }
    }
    for i in 0..p {
        for j in (i + 1)..p {
            let (a, b) = (theta[(i, j)], theta[(j, i)]);
            let v = if a == 0.0 || b == 0.0 { 0.0 } else { 0.5 * (a + b) };
            theta[(i, j)] = v;
            theta[(j, i)] = v;
        }
    }
    Ok(theta)
}

/// `tr(SΘ) − p + Σ_{i≠j} Λ_ij |Θ_ij|`.
pub fn duality_gap(sigma: &DMatrix<f64>, penalty: &PenaltyMatrix, theta: &DMatrix<f64>) -> f64 {
    let p = sigma.nrows();
    let mut total = -(p as f64);
    for i in 0..p {
        for j in 0..p {
            total += sigma[(i, j)] * theta[(i, j)];
            if i != j {
                total += penalty.get(i, j) * theta[(i, j)].abs();
            }
        }
    }
    total
}

/// Largest violation of the optimality conditions of the penalized problem
/// at `theta`, computed from `W = Θ⁻¹`:
///
/// * diagonal: `|W_ii − S_ii|`;
/// * off-diagonal with `Θ_ij ≠ 0`: `|W_ij − S_ij − Λ_ij sign(Θ_ij)|`;
/// * off-diagonal with `Θ_ij = 0`: `max(0, |W_ij − S_ij| − Λ_ij)`;
/// * constrained pairs are skipped.
pub fn kkt_residual(
    sigma: &DMatrix<f64>,
    penalty: &PenaltyMatrix,
    theta: &PrecisionEstimate,
    zero_constraint: Option<&EdgeSet>,
) -> Result<f64> {
    let p = sigma.nrows();
    if theta.p() != p || penalty.p() != p {
        return Err(QuiltError::DimensionMismatch {
            expected: p,
            found: theta.p(),
        });
    }
    let pinned = constraint_matrix(p, zero_constraint)?;
    let w = inverse_spd(theta.theta())?;
    let t = theta.theta();
    let mut worst = 0.0_f64;
    for i in 0..p {
        worst = worst.max((w[(i, i)] - sigma[(i, i)]).abs());
        for j in (i + 1)..p {
            if pinned[i * p + j] {
                continue;
            }
            let diff = w[(i, j)] - sigma[(i, j)];
            let lam = penalty.get(i, j);
            let r = if t[(i, j)] != 0.0 {
                (diff - lam * t[(i, j)].signum()).abs()
            } else {
                (diff.abs() - lam).max(0.0)
            };
            worst = worst.max(r);
        }
    }
    Ok(worst)
}

/// Tolerance used for population (unpenalized, constrained) solves.
pub const POPULATION_TOLERANCE: f64 = 1e-10;

/// The maximum-determinant completion consistent with `sigma_o` on the
/// observed pairs: the unpenalized solve with `Θ` forced to zero on every
/// unobserved pair.
pub fn population_madgq(sigma_o: &MaskedCorrelation) -> Result<PrecisionEstimate> {
    let p = sigma_o.p();
    let zero = EdgeSet::from_pairs(p, sigma_o.mask().unobserved_pairs())?;
    let options = SolverOptions {
        max_iterations: 100_000,
        tolerance: POPULATION_TOLERANCE,
        zero_constraint: if zero.is_empty() { None } else { Some(zero) },
        record_trace: false,
    };
    solve(sigma_o.values(), &PenaltyMatrix::uniform(p, 0.0)?, &options)
}
