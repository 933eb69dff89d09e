//! Rank-based correlation estimates on block-observed data.
//!
//! Each block yields a Spearman or Kendall matrix over its own variables. The
//! block matrices are averaged over every block holding a pair, pairs never
//! observed together stay at zero, and a sine transform maps the rank
//! statistic onto the latent Gaussian correlation scale.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{QuiltError, Result};
use crate::linalg::{principal, sym_eigen_desc};
use crate::types::{BlockDesign, MaskedCorrelation};

/// Which rank statistic to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    /// Spearman's rho.
    Rho,
    /// Kendall's tau.
    Tau,
}

impl std::str::FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rho" | "spearman" => Ok(Statistic::Rho),
            "tau" | "kendall" => Ok(Statistic::Tau),
            other => Err(format!("unknown statistic `{other}` (expected rho or tau)")),
        }
    }
}

impl std::fmt::Display for Statistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Statistic::Rho => "rho",
            Statistic::Tau => "tau",
        })
    }
}

/// What to do with a constant column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// Fail with [`QuiltError::DegenerateColumns`].
    #[default]
    Error,
    /// Report zero correlation for the column's pairs and flag it.
    ZeroWithFlag,
}

/// How block statistics are averaged over the blocks sharing a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockWeighting {
    /// Plain average over blocks.
    #[default]
    Unweighted,
    /// Average weighted by block sample size.
    SampleSize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankCorrOptions {
    pub degenerate: DegeneratePolicy,
    pub weighting: BlockWeighting,
}

/// Midranks of a column.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranks {
    pub values: Vec<f64>,
    /// True when every entry is tied (the column is constant).
    pub degenerate: bool,
}

/// Ranks `1..=n`, ties sharing the average of the positions they occupy.
pub fn ranks(column: &[f64]) -> Result<Ranks> {
    let n = column.len();
    if n < 2 {
        return Err(QuiltError::InvalidInput(format!(
            "ranking needs at least 2 observations, got {n}"
        )));
    }
    if column.iter().any(|v| v.is_nan()) {
        return Err(QuiltError::InvalidInput("NaN in column".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && column[order[end]] == column[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let mid = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            out[idx] = mid;
        }
        start = end;
    }
    let degenerate = column.iter().all(|&v| v == column[0]);
    Ok(Ranks {
        values: out,
        degenerate,
    })
}

/// Dense integer codes preserving order and ties (equal values share a code).
fn ordinal_codes(column: &[f64]) -> Vec<u32> {
    let n = column.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
    let mut codes = vec![0u32; n];
    let mut code = 0u32;
    for w in 0..n {
        if w > 0 && column[order[w]] != column[order[w - 1]] {
            code += 1;
        }
        codes[order[w]] = code;
    }
    codes
}

fn check_block(data: &DMatrix<f64>, min_rows: usize) -> Result<()> {
    if data.nrows() < min_rows {
        return Err(QuiltError::InvalidInput(format!(
            "block has {} observations, need at least {min_rows}",
            data.nrows()
        )));
    }
    if data.ncols() == 0 {
        return Err(QuiltError::InvalidInput("block has no columns".into()));
    }
    Ok(())
}

fn degenerate_error(block: usize, columns: Vec<usize>) -> QuiltError {
    QuiltError::DegenerateColumns { block, columns }
}

/// Spearman's rho between every pair of columns of an `n × p_k` block, the
/// Pearson correlation of the midrank vectors. Fails on constant columns.
pub fn spearman_block(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spearman_block_with(data, DegeneratePolicy::Error).map(|(m, _)| m)
}

/// [`spearman_block`] with an explicit policy for constant columns; also
/// returns the flagged columns.
pub fn spearman_block_with(
    data: &DMatrix<f64>,
    policy: DegeneratePolicy,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    check_block(data, 3)?;
    let (n, pk) = data.shape();
    let centre = (n as f64 + 1.0) / 2.0;
    let mut centred = DMatrix::zeros(n, pk);
    let mut flagged = Vec::new();
    for j in 0..pk {
        let col: Vec<f64> = data.column(j).iter().copied().collect();
        let r = ranks(&col)?;
        if r.degenerate {
            flagged.push(j);
        }
        for (i, v) in r.values.iter().enumerate() {
            centred[(i, j)] = v - centre;
        }
    }
    if !flagged.is_empty() && policy == DegeneratePolicy::Error {
        return Err(degenerate_error(0, flagged));
    }
    let gram = centred.transpose() * &centred;
    let mut rho = DMatrix::identity(pk, pk);
    for j in 0..pk {
        for l in (j + 1)..pk {
            let denom = (gram[(j, j)] * gram[(l, l)]).sqrt();
            let v = if denom > 0.0 {
                (gram[(j, l)] / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            rho[(j, l)] = v;
            rho[(l, j)] = v;
        }
    }
    Ok((rho, flagged))
}

/// Ties within a sorted code sequence: the number of unordered tied pairs.
fn tied_pairs_sorted(sorted: &[u32]) -> i64 {
    let mut total = 0i64;
    let mut run = 1i64;
    for w in 1..sorted.len() {
        if sorted[w] == sorted[w - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Counts strict inversions of `seq` by merge sort, sorting it in place.
fn count_inversions(seq: &mut [u32], buf: &mut [u32]) -> i64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = {
        let (left, right) = seq.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        count_inversions(left, bl) + count_inversions(right, br)
    };
    let (mut a, mut b, mut k) = (0, mid, 0);
    while a < mid && b < n {
        if seq[a] <= seq[b] {
            buf[k] = seq[a];
            a += 1;
        } else {
            buf[k] = seq[b];
            inv += (mid - a) as i64;
            b += 1;
        }
        k += 1;
    }
    while a < mid {
        buf[k] = seq[a];
        a += 1;
        k += 1;
    }
    while b < n {
        buf[k] = seq[b];
        b += 1;
        k += 1;
    }
    seq.copy_from_slice(&buf[..n]);
    inv
}

/// Per-column data reused across all Kendall pairs involving the column.
struct KendallColumn {
    codes: Vec<u32>,
    /// Row indices sorted by code.
    order: Vec<usize>,
    tied_pairs: i64,
}

impl KendallColumn {
    fn new(column: &[f64]) -> Self {
        let codes = ordinal_codes(column);
        let mut order: Vec<usize> = (0..codes.len()).collect();
        order.sort_by_key(|&i| codes[i]);
        let sorted: Vec<u32> = order.iter().map(|&i| codes[i]).collect();
        let tied_pairs = tied_pairs_sorted(&sorted);
        Self {
            codes,
            order,
            tied_pairs,
        }
    }
}

/// `Σ_{i<i'} sign((x_i − x_i')(y_i − y_i'))` in `O(n log n)`.
fn kendall_numerator(x: &KendallColumn, y: &KendallColumn, seq: &mut Vec<u32>, buf: &mut Vec<u32>) -> i64 {
    let n = x.codes.len() as i64;
    seq.clear();
    seq.extend(x.order.iter().map(|&i| y.codes[i]));
    // sort y within runs of tied x so tied-x pairs are never counted as inversions
    let mut joint_ties = 0i64;
    let mut start = 0;
    let len = seq.len();
    while start < len {
        let xs = x.codes[x.order[start]];
        let mut end = start + 1;
        while end < len && x.codes[x.order[end]] == xs {
            end += 1;
        }
        if end - start > 1 {
            seq[start..end].sort_unstable();
            joint_ties += tied_pairs_sorted(&seq[start..end]);
        }
        start = end;
    }
    buf.resize(len, 0);
    let discordant = count_inversions(seq, buf);
    let total = n * (n - 1) / 2;
    total - x.tied_pairs - y.tied_pairs + joint_ties - 2 * discordant
}

/// Kendall's tau of two equally long vectors with the `sign(0) = 0`
/// convention: `(2 / (n (n − 1))) Σ_{i<i'} sign((x_i − x_i')(y_i − y_i'))`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(QuiltError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(QuiltError::InvalidInput(format!(
            "Kendall's tau needs at least 2 observations, got {n}"
        )));
    }
    let cx = KendallColumn::new(x);
    let cy = KendallColumn::new(y);
    let s = kendall_numerator(&cx, &cy, &mut Vec::new(), &mut Vec::new());
    Ok(s as f64 / (n as i64 * (n as i64 - 1) / 2) as f64)
}

/// Kendall's tau between every pair of columns of an `n × p_k` block.
pub fn kendall_block(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    kendall_block_with(data, DegeneratePolicy::Error).map(|(m, _)| m)
}

/// [`kendall_block`] with an explicit policy for constant columns.
pub fn kendall_block_with(
    data: &DMatrix<f64>,
    policy: DegeneratePolicy,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    check_block(data, 2)?;
    if data.iter().any(|v| v.is_nan()) {
        return Err(QuiltError::InvalidInput("NaN in block".into()));
    }
    let (n, pk) = data.shape();
    let cols: Vec<KendallColumn> = (0..pk)
        .map(|j| KendallColumn::new(data.column(j).as_slice()))
        .collect();
    let total = (n as i64 * (n as i64 - 1) / 2) as f64;
    let flagged: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.tied_pairs as f64 == total)
        .map(|(j, _)| j)
        .collect();
    if !flagged.is_empty() && policy == DegeneratePolicy::Error {
        return Err(degenerate_error(0, flagged));
    }
    let mut tau = DMatrix::identity(pk, pk);
    let (mut seq, mut buf) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for j in 0..pk {
        for l in (j + 1)..pk {
            let s = kendall_numerator(&cols[j], &cols[l], &mut seq, &mut buf);
            let v = s as f64 / total;
            tau[(j, l)] = v;
            tau[(l, j)] = v;
        }
    }
    Ok((tau, flagged))
}

/// Rank statistic matrix of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRankCorrelation {
    pub block: usize,
    pub statistic: Statistic,
    /// `p_k × p_k`, indexed by position within the block.
    pub values: DMatrix<f64>,
    /// Constant columns (local indices) zeroed under
    /// [`DegeneratePolicy::ZeroWithFlag`].
    pub degenerate_columns: Vec<usize>,
}

impl BlockRankCorrelation {
    pub fn compute(
        block: usize,
        data: &DMatrix<f64>,
        statistic: Statistic,
        policy: DegeneratePolicy,
    ) -> Result<Self> {
        let result = match statistic {
            Statistic::Rho => spearman_block_with(data, policy),
            Statistic::Tau => kendall_block_with(data, policy),
        };
        let (values, degenerate_columns) = result.map_err(|e| match e {
            QuiltError::DegenerateColumns { columns, .. } => {
                QuiltError::DegenerateColumns { block, columns }
            }
            other => other,
        })?;
        Ok(Self {
            block,
            statistic,
            values,
            degenerate_columns,
        })
    }
}

/// Averages block statistics over the blocks sharing each pair. Pairs never
/// observed together are zero, the diagonal is one. No sine transform yet.
pub fn combine_blocks(
    design: &BlockDesign,
    per_block: &[BlockRankCorrelation],
    weighting: BlockWeighting,
) -> Result<MaskedCorrelation> {
    if per_block.len() != design.num_blocks() {
        return Err(QuiltError::DimensionMismatch {
            expected: design.num_blocks(),
            found: per_block.len(),
        });
    }
    let p = design.p();
    let mut sum = DMatrix::<f64>::zeros(p, p);
    let mut weight = DMatrix::<f64>::zeros(p, p);
    for (k, stat) in per_block.iter().enumerate() {
        let block = design.block(k);
        if stat.values.nrows() != block.len() || stat.values.ncols() != block.len() {
            return Err(QuiltError::DimensionMismatch {
                expected: block.len(),
                found: stat.values.nrows(),
            });
        }
        let w = match weighting {
            BlockWeighting::Unweighted => 1.0,
            BlockWeighting::SampleSize => design.sample_sizes()[k] as f64,
        };
        for (a, &i) in block.iter().enumerate() {
            for (b, &j) in block.iter().enumerate() {
                sum[(i, j)] += w * stat.values[(a, b)];
                weight[(i, j)] += w;
            }
        }
    }
    let mut combined = DMatrix::identity(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            if weight[(i, j)] > 0.0 {
                let v = sum[(i, j)] / weight[(i, j)];
                combined[(i, j)] = v;
                combined[(j, i)] = v;
            }
        }
    }
    MaskedCorrelation::new(combined, design.pair_mask())
}

/// `2 sin(π ρ / 6)` for Spearman, `sin(π τ / 2)` for Kendall, entrywise on the
/// observed pairs. Zeros on unobserved pairs and the unit diagonal are fixed
/// points of both maps.
pub fn sine_transform(masked: &MaskedCorrelation, statistic: Statistic) -> Result<MaskedCorrelation> {
    let f = |v: f64| match statistic {
        Statistic::Rho => 2.0 * (PI * v / 6.0).sin(),
        Statistic::Tau => (PI * v / 2.0).sin(),
    };
    let p = masked.p();
    let mut out = masked.values().clone();
    for i in 0..p {
        for j in (i + 1)..p {
            if masked.mask().is_observed(i, j) {
                let v = f(masked.get(i, j)).clamp(-1.0, 1.0);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out[(i, i)] = 1.0;
    }
    MaskedCorrelation::new(out, masked.mask().clone())
}

/// Full pipeline: per-block statistics, block averaging and sine transform.
pub fn rank_correlation(
    design: &BlockDesign,
    blocks: &[DMatrix<f64>],
    statistic: Statistic,
    options: RankCorrOptions,
) -> Result<MaskedCorrelation> {
    let per_block = block_statistics(design, blocks, statistic, options.degenerate)?;
    let combined = combine_blocks(design, &per_block, options.weighting)?;
    sine_transform(&combined, statistic)
}

/// Computes the statistic on every block, in design order.
pub fn block_statistics(
    design: &BlockDesign,
    blocks: &[DMatrix<f64>],
    statistic: Statistic,
    policy: DegeneratePolicy,
) -> Result<Vec<BlockRankCorrelation>> {
    if blocks.len() != design.num_blocks() {
        return Err(QuiltError::DimensionMismatch {
            expected: design.num_blocks(),
            found: blocks.len(),
        });
    }
    blocks
        .iter()
        .enumerate()
        .map(|(k, data)| {
            if data.ncols() != design.block(k).len() {
                return Err(QuiltError::DimensionMismatch {
                    expected: design.block(k).len(),
                    found: data.ncols(),
                });
            }
            BlockRankCorrelation::compute(k, data, statistic, policy)
        })
        .collect()
}

/// Clips the eigenvalues of a symmetric unit-diagonal matrix at `ridge` and
/// rescales back to unit diagonal, repeating until the smallest eigenvalue
/// reaches `ridge`. Matrices already meeting the floor are returned as is.
pub fn clip_to_correlation(m: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut current = m.clone();
    for _ in 0..100 {
        let (vals, vecs) = sym_eigen_desc(&current);
        if vals.last().copied().unwrap_or(0.0) >= ridge {
            break;
        }
        let clipped: Vec<f64> = vals.iter().map(|&v| v.max(ridge)).collect();
        let mut rebuilt = DMatrix::zeros(n, n);
        for (c, &lam) in clipped.iter().enumerate() {
            let v = vecs.column(c);
            rebuilt += lam * v * v.transpose();
        }
        let d: Vec<f64> = (0..n).map(|i| rebuilt[(i, i)].sqrt()).collect();
        for i in 0..n {
            for j in 0..n {
                rebuilt[(i, j)] /= d[i] * d[j];
            }
        }
        for i in 0..n {
            rebuilt[(i, i)] = 1.0;
            for j in (i + 1)..n {
                let v = (0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)])).clamp(-1.0, 1.0);
                rebuilt[(i, j)] = v;
                rebuilt[(j, i)] = v;
            }
        }
        current = rebuilt;
    }
    current
}

/// Makes every block's principal submatrix positive definite with smallest
/// eigenvalue at least `ridge` and unit diagonal, by eigenvalue clipping.
/// Blocks are repaired cyclically in design order until none needs repair.
/// Unobserved pairs are left at zero; already valid blocks are untouched.
pub fn psd_repair(
    masked: &MaskedCorrelation,
    design: &BlockDesign,
    ridge: f64,
) -> Result<MaskedCorrelation> {
    if design.p() != masked.p() {
        return Err(QuiltError::DimensionMismatch {
            expected: design.p(),
            found: masked.p(),
        });
    }
    if ridge < 0.0 {
        return Err(QuiltError::InvalidInput(format!("negative ridge {ridge}")));
    }
    let mut values = masked.values().clone();
    for _round in 0..100 {
        let mut changed = false;
        for block in design.blocks() {
            let sub = principal(&values, block);
            let (vals, _) = sym_eigen_desc(&sub);
            if vals.last().copied().unwrap_or(0.0) >= ridge {
                continue;
            }
            let fixed = clip_to_correlation(&sub, ridge);
            for (a, &i) in block.iter().enumerate() {
                for (b, &j) in block.iter().enumerate() {
                    values[(i, j)] = fixed[(a, b)];
                }
            }
            changed = true;
        }
        if !changed {
            break;
        }
    }
    MaskedCorrelation::new(values, masked.mask().clone())
}

/// Ridge used by [`CorrelationOptions::default`] for block PSD repair.
pub const DEFAULT_RIDGE: f64 = 1e-4;

/// Everything needed to turn block data into a repaired masked correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    pub statistic: Statistic,
    pub rank: RankCorrOptions,
    /// Eigenvalue floor for [`psd_repair`].
    pub ridge: f64,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        Self {
            statistic: Statistic::Rho,
            rank: RankCorrOptions::default(),
            ridge: DEFAULT_RIDGE,
        }
    }
}

impl CorrelationOptions {
    pub fn with_statistic(statistic: Statistic) -> Self {
        Self {
            statistic,
            ..Self::default()
        }
    }
}

/// [`rank_correlation`] followed by [`psd_repair`].
pub fn estimate_correlation(
    design: &BlockDesign,
    blocks: &[DMatrix<f64>],
    options: &CorrelationOptions,
) -> Result<MaskedCorrelation> {
    let raw = rank_correlation(design, blocks, options.statistic, options.rank)?;
    psd_repair(&raw, design, options.ridge)
}
