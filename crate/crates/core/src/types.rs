//! Shared data types: block designs, observation masks, masked correlation
//! matrices, precision estimates and edge sets.
//!
//! Indices are 0-based everywhere in this crate. File formats written by the
//! command-line tool convert to 1-based indices at the boundary.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{QuiltError, Result};

/// Absolute tolerance used when checking symmetry and the `[-1, 1]` range.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Entries of a converged precision matrix below this magnitude are stored as
/// exact zeros.
pub const ZERO_SNAP: f64 = 1e-10;

/// `K` possibly overlapping blocks of variables, each recorded in its own
/// session with its own sample size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDesign {
    p: usize,
    blocks: Vec<Vec<usize>>,
    sample_sizes: Vec<usize>,
}

impl BlockDesign {
    /// Builds a design after checking its structural invariants: every block
    /// is nonempty, indices lie in `0..p`, no block repeats an index and every
    /// sample size is positive.
    ///
    /// Coverage and the `|O| > p` requirement are checked separately by
    /// [`BlockDesign::validate`], so that designs violating them can still be
    /// inspected.
    pub fn new(p: usize, blocks: Vec<Vec<usize>>, sample_sizes: Vec<usize>) -> Result<Self> {
        if p == 0 {
            return Err(QuiltError::InvalidDesign("p must be positive".into()));
        }
        if blocks.is_empty() {
            return Err(QuiltError::InvalidDesign("at least one block is required".into()));
        }
        if blocks.len() != sample_sizes.len() {
            return Err(QuiltError::InvalidDesign(format!(
                "{} blocks but {} sample sizes",
                blocks.len(),
                sample_sizes.len()
            )));
        }
        for (k, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(QuiltError::InvalidDesign(format!("block {k} is empty")));
            }
            let mut seen = BTreeSet::new();
            for &i in block {
                if i >= p {
                    return Err(QuiltError::InvalidDesign(format!(
                        "block {k} contains index {i}, outside 0..{p}"
                    )));
                }
                if !seen.insert(i) {
                    return Err(QuiltError::InvalidDesign(format!(
                        "block {k} repeats index {i}"
                    )));
                }
            }
            if sample_sizes[k] == 0 {
                return Err(QuiltError::InvalidDesign(format!(
                    "block {k} has zero sample size"
                )));
            }
        }
        Ok(Self {
            p,
            blocks,
            sample_sizes,
        })
    }

    /// Same as [`BlockDesign::new`], additionally requiring the design to pass
    /// [`BlockDesign::validate`].
    pub fn validated(p: usize, blocks: Vec<Vec<usize>>, sample_sizes: Vec<usize>) -> Result<Self> {
        let design = Self::new(p, blocks, sample_sizes)?;
        design.validate().into_result()?;
        Ok(design)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn block(&self, k: usize) -> &[usize] {
        &self.blocks[k]
    }

    pub fn sample_sizes(&self) -> &[usize] {
        &self.sample_sizes
    }

    pub fn min_sample_size(&self) -> usize {
        self.sample_sizes.iter().copied().min().unwrap_or(0)
    }

    /// Complement of block `k` in `0..p`, in increasing order.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        let inside: BTreeSet<usize> = self.blocks[k].iter().copied().collect();
        (0..self.p).filter(|i| !inside.contains(i)).collect()
    }

    /// Blocks containing variable `i`.
    pub fn blocks_containing(&self, i: usize) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.contains(&i))
            .map(|(k, _)| k)
            .collect()
    }

    /// Returns a copy with the same blocks and different sample sizes.
    pub fn with_sample_sizes(&self, sample_sizes: Vec<usize>) -> Result<Self> {
        Self::new(self.p, self.blocks.clone(), sample_sizes)
    }

    /// Joint sample size of every pair: the summed `n_k` over blocks holding
    /// both variables (zero on unobserved pairs).
    pub fn joint_sample_sizes(&self) -> DMatrix<f64> {
        let mut n = DMatrix::zeros(self.p, self.p);
        for (block, &nk) in self.blocks.iter().zip(&self.sample_sizes) {
            for &i in block {
                for &j in block {
                    n[(i, j)] += nk as f64;
                }
            }
        }
        n
    }

    /// The induced observed-pair mask `O`.
    pub fn pair_mask(&self) -> PairMask {
        induced_pair_set(self)
    }

    /// Checks the sufficient-measurement requirements: all variables covered
    /// and at least one off-diagonal pair observed.
    pub fn validate(&self) -> DesignReport {
        validate_design(self)
    }
}

/// Outcome of [`validate_design`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DesignReport {
    pub p: usize,
    /// Variables that belong to no block.
    pub uncovered: Vec<usize>,
    /// `|O|`, counted over ordered pairs including the diagonal.
    pub observed_pairs: usize,
}

impl DesignReport {
    pub fn passes(&self) -> bool {
        self.uncovered.is_empty() && self.observed_pairs > self.p
    }

    pub fn into_result(self) -> Result<()> {
        if !self.uncovered.is_empty() {
            return Err(QuiltError::InvalidDesign(format!(
                "variables {:?} are not covered by any block",
                self.uncovered
            )));
        }
        if self.observed_pairs <= self.p {
            return Err(QuiltError::InvalidDesign(format!(
                "|O| = {} does not exceed p = {}; no off-diagonal pair is observed",
                self.observed_pairs, self.p
            )));
        }
        Ok(())
    }
}

/// Reports coverage and `|O| > p` violations of a design.
pub fn validate_design(design: &BlockDesign) -> DesignReport {
    let mut covered = vec![false; design.p];
    for block in &design.blocks {
        for &i in block {
            covered[i] = true;
        }
    }
    let uncovered = covered
        .iter()
        .enumerate()
        .filter(|(_, &c)| !c)
        .map(|(i, _)| i)
        .collect();
    let mask = induced_pair_set(design);
    DesignReport {
        p: design.p,
        uncovered,
        observed_pairs: mask.observed_count(),
    }
}

/// Symmetric indicator of the jointly observed pairs `O`. The diagonal is
/// always observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairMask {
    p: usize,
    observed: Vec<bool>,
}

impl PairMask {
    /// Every pair observed.
    pub fn full(p: usize) -> Self {
        Self {
            p,
            observed: vec![true; p * p],
        }
    }

    /// Builds a mask from a row-major boolean matrix, rejecting asymmetric
    /// input or a diagonal with unobserved entries.
    pub fn from_rows(p: usize, observed: Vec<bool>) -> Result<Self> {
        if observed.len() != p * p {
            return Err(QuiltError::DimensionMismatch {
                expected: p * p,
                found: observed.len(),
            });
        }
        for i in 0..p {
            if !observed[i * p + i] {
                return Err(QuiltError::InvalidInput(format!(
                    "mask diagonal entry {i} is unobserved"
                )));
            }
            for j in 0..i {
                if observed[i * p + j] != observed[j * p + i] {
                    return Err(QuiltError::InvalidInput(format!(
                        "mask is asymmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { p, observed })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.p + j]
    }

    /// `|O|` over ordered pairs, diagonal included.
    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    /// Unordered off-diagonal pairs `(i, j)`, `i < j`, that are observed.
    pub fn observed_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let p = self.p;
        (0..p).flat_map(move |i| ((i + 1)..p).map(move |j| (i, j)))
            .filter(move |&(i, j)| self.is_observed(i, j))
    }

    /// Unordered off-diagonal pairs `(i, j)`, `i < j`, in `O^c`.
    pub fn unobserved_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let p = self.p;
        (0..p).flat_map(move |i| ((i + 1)..p).map(move |j| (i, j)))
            .filter(move |&(i, j)| !self.is_observed(i, j))
    }

    pub fn is_full(&self) -> bool {
        self.observed.iter().all(|&b| b)
    }

    /// Row-major copy of the indicator.
    pub fn to_rows(&self) -> Vec<bool> {
        self.observed.clone()
    }

    fn set(&mut self, i: usize, j: usize) {
        self.observed[i * self.p + j] = true;
        self.observed[j * self.p + i] = true;
    }
}

/// The observed-pair set `O` of a design: `(i, j)` is observed iff some block
/// holds both `i` and `j`.
pub fn induced_pair_set(design: &BlockDesign) -> PairMask {
    let p = design.p;
    let mut mask = PairMask {
        p,
        observed: vec![false; p * p],
    };
    for i in 0..p {
        mask.set(i, i);
    }
    for block in &design.blocks {
        for (a, &i) in block.iter().enumerate() {
            for &j in &block[a..] {
                mask.set(i, j);
            }
        }
    }
    mask
}

/// A symmetric correlation estimate defined on `O`, zero on `O^c`, with unit
/// diagonal and entries in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedCorrelation {
    values: DMatrix<f64>,
    mask: PairMask,
}

impl MaskedCorrelation {
    /// Validates and stores `values`. Asymmetry or out-of-range entries beyond
    /// [`SYMMETRY_TOLERANCE`] are rejected rather than repaired; within
    /// tolerance the upper triangle is mirrored, the diagonal set to one and
    /// entries clamped to `[-1, 1]`.
    pub fn new(values: DMatrix<f64>, mask: PairMask) -> Result<Self> {
        let p = mask.p();
        if values.nrows() != p || values.ncols() != p {
            return Err(QuiltError::DimensionMismatch {
                expected: p,
                found: values.nrows().max(values.ncols()),
            });
        }
        let mut values = values;
        let mut asym: f64 = 0.0;
        for i in 0..p {
            if values[(i, i)].is_nan() || (values[(i, i)] - 1.0).abs() > SYMMETRY_TOLERANCE {
                return Err(QuiltError::InvalidInput(format!(
                    "diagonal entry {i} is {} rather than 1",
                    values[(i, i)]
                )));
            }
            values[(i, i)] = 1.0;
            for j in (i + 1)..p {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(QuiltError::InvalidInput(format!(
                        "non-finite entry at ({i}, {j})"
                    )));
                }
                asym = asym.max((a - b).abs());
                if a.abs() > 1.0 + SYMMETRY_TOLERANCE {
                    return Err(QuiltError::InvalidInput(format!(
                        "entry ({i}, {j}) = {a} lies outside [-1, 1]"
                    )));
                }
                if !mask.is_observed(i, j) && a.abs() > SYMMETRY_TOLERANCE {
                    return Err(QuiltError::InvalidInput(format!(
                        "entry ({i}, {j}) = {a} is nonzero on an unobserved pair"
                    )));
                }
                let v = if mask.is_observed(i, j) {
                    a.clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        if asym > SYMMETRY_TOLERANCE {
            return Err(QuiltError::Asymmetric(asym));
        }
        Ok(Self { values, mask })
    }

    pub fn p(&self) -> usize {
        self.mask.p()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &PairMask {
        &self.mask
    }

    pub fn into_parts(self) -> (DMatrix<f64>, PairMask) {
        (self.values, self.mask)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

/// Unordered edges `{i, j}`, `i != j`, stored as `(min, max)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EdgeSet {
    p: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl EdgeSet {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            edges: BTreeSet::new(),
        }
    }

    pub fn from_pairs(p: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = Self::new(p);
        for (i, j) in pairs {
            set.insert(i, j)?;
        }
        Ok(set)
    }

    /// Off-diagonal support of a symmetric matrix, reading the upper triangle.
    pub fn from_support(matrix: &DMatrix<f64>, zero_tol: f64) -> Self {
        let p = matrix.nrows();
        let mut set = Self::new(p);
        for i in 0..p {
            for j in (i + 1)..p {
                if matrix[(i, j)].abs() > zero_tol {
                    set.edges.insert((i, j));
                }
            }
        }
        set
    }

    pub fn insert(&mut self, i: usize, j: usize) -> Result<bool> {
        if i == j {
            return Err(QuiltError::InvalidInput(format!("self-loop at node {i}")));
        }
        if i >= self.p || j >= self.p {
            return Err(QuiltError::InvalidInput(format!(
                "edge ({i}, {j}) outside 0..{}",
                self.p
            )));
        }
        Ok(self.edges.insert((i.min(j), i.max(j))))
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn union(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet {
            p: self.p,
            edges: self.edges.union(&other.edges).copied().collect(),
        }
    }

    pub fn intersection(&self, other: &EdgeSet) -> EdgeSet {
        EdgeSet {
            p: self.p,
            edges: self.edges.intersection(&other.edges).copied().collect(),
        }
    }

    /// Edges on observed (`observed = true`) or unobserved pairs of `mask`.
    pub fn restrict(&self, mask: &PairMask, observed: bool) -> EdgeSet {
        EdgeSet {
            p: self.p,
            edges: self
                .edges
                .iter()
                .copied()
                .filter(|&(i, j)| mask.is_observed(i, j) == observed)
                .collect(),
        }
    }

    /// Number of neighbours of every node.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.p];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Adjacency lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.p];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }
}

/// A symmetric positive definite precision matrix and its off-diagonal
/// support. Entries outside the support are exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionEstimate {
    theta: DMatrix<f64>,
    support: EdgeSet,
}

impl PrecisionEstimate {
    /// Snaps entries below [`ZERO_SNAP`] to zero, checks symmetry and positive
    /// definiteness, and records the support.
    pub fn new(mut theta: DMatrix<f64>) -> Result<Self> {
        let p = theta.nrows();
        if theta.ncols() != p {
            return Err(QuiltError::DimensionMismatch {
                expected: p,
                found: theta.ncols(),
            });
        }
        let scale = theta.amax().max(1.0);
        let mut asym: f64 = 0.0;
        for i in 0..p {
            for j in (i + 1)..p {
                asym = asym.max((theta[(i, j)] - theta[(j, i)]).abs());
            }
        }
        if asym > 1e-9 * scale {
            return Err(QuiltError::Asymmetric(asym));
        }
        for i in 0..p {
            for j in (i + 1)..p {
                let mut v = 0.5 * (theta[(i, j)] + theta[(j, i)]);
                if v.abs() < ZERO_SNAP {
                    v = 0.0;
                }
                theta[(i, j)] = v;
                theta[(j, i)] = v;
            }
        }
        if theta.clone().cholesky().is_none() {
            return Err(QuiltError::NotPositiveDefinite(
                "precision estimate failed Cholesky factorization".into(),
            ));
        }
        let support = EdgeSet::from_support(&theta, 0.0);
        Ok(Self { theta, support })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn support(&self) -> &EdgeSet {
        &self.support
    }

    pub fn p(&self) -> usize {
        self.theta.nrows()
    }
}
