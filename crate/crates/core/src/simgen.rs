//! Synthetic nonparanormal data.
//!
//! Sparse precision matrices (small-world, chain, block cliques), spiked
//! covariances with an exactly sparse inverse, Gaussian sampling through a
//! copula into Gamma or Cauchy marginals, and random chained block designs.

use std::collections::BTreeSet;
use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{QuiltError, Result};
use crate::linalg::{inverse_spd, principal, sym_eigenvalues};
use crate::types::{BlockDesign, EdgeSet};

/// Entries of a generated precision matrix below this are not edges.
pub const TRUTH_ZERO: f64 = 1e-8;

/// Graph family for the precision matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Structure {
    /// Watts–Strogatz: ring lattice with `neighbors` (even) links per node,
    /// each rewired with probability `rewire_prob`.
    SmallWorld { neighbors: usize, rewire_prob: f64 },
    /// Path `0 – 1 – … – p−1`.
    Chain,
    /// Disjoint cliques on consecutive runs of `block_size` variables.
    BlockDiagonal { block_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub structure: Structure,
    /// Edge magnitudes are uniform on `[lo, hi]` with a random sign.
    #[serde(default = "default_weight_range")]
    pub weight_range: (f64, f64),
    /// Added to the absolute row sum on the diagonal.
    #[serde(default = "default_boost")]
    pub diagonal_boost: f64,
}

fn default_weight_range() -> (f64, f64) {
    (0.2, 0.5)
}

fn default_boost() -> f64 {
    0.1
}

impl GraphSpec {
    pub fn small_world(neighbors: usize, rewire_prob: f64) -> Self {
        Self {
            structure: Structure::SmallWorld { neighbors, rewire_prob },
            weight_range: default_weight_range(),
            diagonal_boost: default_boost(),
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        let (lo, hi) = self.weight_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(QuiltError::InvalidInput(format!("weight range ({lo}, {hi}) must satisfy 0 < lo ≤ hi")));
        }
        if !(self.diagonal_boost > 0.0) {
            return Err(QuiltError::InvalidInput("diagonal_boost must be positive".into()));
        }
        match self.structure {
            Structure::SmallWorld { neighbors, rewire_prob } => {
                check_small_world(p, neighbors, rewire_prob)?;
            }
            Structure::Chain => {
                if p < 2 {
                    return Err(QuiltError::InvalidInput("chain needs p ≥ 2".into()));
                }
            }
            Structure::BlockDiagonal { block_size } => {
                if block_size == 0 || block_size > p {
                    return Err(QuiltError::InvalidInput(format!("block_size {block_size} out of range")));
                }
            }
        }
        Ok(())
    }
}

fn check_small_world(p: usize, neighbors: usize, rewire_prob: f64) -> Result<()> {
    if neighbors == 0 || !neighbors.is_multiple_of(2) || neighbors >= p {
        return Err(QuiltError::InvalidInput(format!(
            "small-world neighbors must be even, positive and below p = {p}, got {neighbors}"
        )));
    }
    if !(0.0..=1.0).contains(&rewire_prob) {
        return Err(QuiltError::InvalidInput(format!("rewire probability {rewire_prob} outside [0, 1]")));
    }
    Ok(())
}

/// Watts–Strogatz graph on `p` nodes.
pub fn watts_strogatz<R: Rng + ?Sized>(p: usize, neighbors: usize, rewire_prob: f64, rng: &mut R) -> Result<EdgeSet> {
    check_small_world(p, neighbors, rewire_prob)?;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); p];
    for i in 0..p {
        for d in 1..=neighbors / 2 {
            let j = (i + d) % p;
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    for d in 1..=neighbors / 2 {
        for i in 0..p {
            let j = (i + d) % p;
            if rng.random::<f64>() < rewire_prob && adj[i].contains(&j) && adj[i].len() < p - 1 {
                let target = loop {
                    let w = rng.random_range(0..p);
                    if w != i && !adj[i].contains(&w) {
                        break w;
                    }
                };
                adj[i].remove(&j);
                adj[j].remove(&i);
                adj[i].insert(target);
                adj[target].insert(i);
            }
        }
    }
    EdgeSet::from_pairs(p, adj.iter().enumerate().flat_map(|(i, s)| s.iter().map(move |&j| (i, j))))
}

fn structure_edges<R: Rng + ?Sized>(p: usize, structure: &Structure, rng: &mut R) -> Result<EdgeSet> {
    match *structure {
        Structure::SmallWorld { neighbors, rewire_prob } => watts_strogatz(p, neighbors, rewire_prob, rng),
        Structure::Chain => EdgeSet::from_pairs(p, (0..p - 1).map(|i| (i, i + 1))),
        Structure::BlockDiagonal { block_size } => {
            let mut pairs = Vec::new();
            for start in (0..p).step_by(block_size) {
                let end = (start + block_size).min(p);
                for i in start..end {
                    for j in (i + 1)..end {
                        pairs.push((i, j));
                    }
                }
            }
            EdgeSet::from_pairs(p, pairs)
        }
    }
}

/// A true model: correlation matrix, its inverse and the edges.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    /// Precision matrix on the correlation scale, `sigma⁻¹`.
    pub theta: DMatrix<f64>,
    /// Unit-diagonal covariance.
    pub sigma: DMatrix<f64>,
    pub edges: EdgeSet,
}

impl TrueModel {
    /// Rescales a precision matrix so its inverse has unit diagonal.
    pub fn from_precision(theta: &DMatrix<f64>) -> Result<Self> {
        let p = theta.nrows();
        let cov = inverse_spd(theta)?;
        let d: Vec<f64> = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
        let mut sigma = DMatrix::from_fn(p, p, |i, j| cov[(i, j)] / (d[i] * d[j]));
        let mut scaled = DMatrix::from_fn(p, p, |i, j| theta[(i, j)] * d[i] * d[j]);
        for i in 0..p {
            sigma[(i, i)] = 1.0;
            for j in (i + 1)..p {
                let s = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
                sigma[(i, j)] = s;
                sigma[(j, i)] = s;
                let t = 0.5 * (scaled[(i, j)] + scaled[(j, i)]);
                scaled[(i, j)] = t;
                scaled[(j, i)] = t;
            }
        }
        let edges = EdgeSet::from_support(theta, TRUTH_ZERO);
        Ok(Self {
            theta: scaled,
            sigma,
            edges,
        })
    }
}

fn draw_weight<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let m = lo + (hi - lo) * rng.random::<f64>();
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

/// Diagonally dominant precision matrix on the chosen graph: off-diagonal
/// weights uniform on `±[lo, hi]`, diagonal the absolute row sum plus the
/// boost. Returned on its original scale together with its edges.
pub fn generate_precision<R: Rng + ?Sized>(p: usize, spec: &GraphSpec, rng: &mut R) -> Result<(DMatrix<f64>, EdgeSet)> {
    spec.validate(p)?;
    let edges = structure_edges(p, &spec.structure, rng)?;
    let (lo, hi) = spec.weight_range;
    let mut theta = DMatrix::zeros(p, p);
    for (i, j) in edges.iter() {
        let w = draw_weight(lo, hi, rng);
        theta[(i, j)] = w;
        theta[(j, i)] = w;
    }
    for i in 0..p {
        theta[(i, i)] = theta.row(i).iter().map(|v| v.abs()).sum::<f64>() + spec.diagonal_boost;
    }
    Ok((theta, edges))
}

/// Spiked covariance with a sparse inverse: `Θ = L + εI` with `L` the
/// weighted Laplacian of `rank` disjoint small-world communities. The
/// covariance has `rank` leading eigenvalues `1/ε`; `ε` is chosen so the
/// ratio of the `rank`-th to the next eigenvalue equals `eigen_ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikedSpec {
    pub rank: usize,
    #[serde(default = "default_eigen_ratio")]
    pub eigen_ratio: f64,
    pub neighbors: usize,
    pub rewire_prob: f64,
    #[serde(default = "default_weight_range")]
    pub weight_range: (f64, f64),
}

fn default_eigen_ratio() -> f64 {
    10.0
}

/// Precision matrix of [`SpikedSpec`] on its original scale.
pub fn generate_spiked_precision<R: Rng + ?Sized>(p: usize, spec: &SpikedSpec, rng: &mut R) -> Result<DMatrix<f64>> {
    let r = spec.rank;
    if r == 0 || r > p {
        return Err(QuiltError::InvalidInput(format!("spike rank {r} out of range for p = {p}")));
    }
    if !(spec.eigen_ratio > 1.0) {
        return Err(QuiltError::InvalidInput("eigen_ratio must exceed 1".into()));
    }
    let (lo, hi) = spec.weight_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(QuiltError::InvalidInput("weight range must satisfy 0 < lo ≤ hi".into()));
    }
    let sizes: Vec<usize> = (0..r).map(|c| p / r + usize::from(c < p % r)).collect();
    for attempt in 0..100 {
        let mut lap = DMatrix::zeros(p, p);
        let mut start = 0;
        for &size in &sizes {
            let g = watts_strogatz(size, spec.neighbors, spec.rewire_prob, rng)?;
            for (a, b) in g.iter() {
                let w = lo + (hi - lo) * rng.random::<f64>();
                let (i, j) = (start + a, start + b);
                lap[(i, j)] -= w;
                lap[(j, i)] -= w;
                lap[(i, i)] += w;
                lap[(j, j)] += w;
            }
            start += size;
        }
        let ev = sym_eigenvalues(&lap);
        let gap = if r < p { ev[r] } else { 1.0 };
        if gap > 1e-6 {
            let eps = gap / (spec.eigen_ratio - 1.0);
            return Ok(lap + DMatrix::identity(p, p) * eps);
        }
        log::debug!("spiked construction attempt {attempt}: disconnected community, retrying");
    }
    Err(QuiltError::Infeasible("could not draw connected communities in 100 attempts".into()))
}

/// Marginal distribution of one observed variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Marginal {
    Gaussian,
    Gamma { shape: f64, scale: f64 },
    Cauchy { location: f64, scale: f64 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Gaussian => Ok(()),
            Marginal::Gamma { shape, scale } if shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite() => Ok(()),
            Marginal::Cauchy { location, scale } if scale > 0.0 && location.is_finite() && scale.is_finite() => Ok(()),
            other => Err(QuiltError::InvalidInput(format!("invalid marginal parameters {other:?}"))),
        }
    }

    /// `F⁻¹(Φ(z))`. The tail beyond the median is computed from the upper
    /// probability so both tails keep full precision.
    pub fn transform(&self, z: f64) -> f64 {
        match *self {
            Marginal::Gaussian => z,
            Marginal::Gamma { shape, scale } => {
                let x = if z <= 0.0 {
                    gamma_quantile(shape, normal_cdf(z), false)
                } else {
                    gamma_quantile(shape, normal_cdf(-z), true)
                };
                scale * x
            }
            Marginal::Cauchy { location, scale } => {
                if z <= 0.0 {
                    location - scale / (PI * normal_cdf(z)).tan()
                } else {
                    location + scale / (PI * normal_cdf(-z)).tan()
                }
            }
        }
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(u: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * u)
}

/// Quantile of Gamma(shape, 1). With `upper` the probability is the upper
/// tail `1 − F(x)`.
pub fn gamma_quantile(shape: f64, prob: f64, upper: bool) -> f64 {
    if prob <= 0.0 {
        return if upper { f64::INFINITY } else { 0.0 };
    }
    if prob >= 1.0 {
        return if upper { 0.0 } else { f64::INFINITY };
    }
    let z = if upper { -normal_quantile(prob) } else { normal_quantile(prob) };
    let c = 1.0 / (9.0 * shape);
    let mut x = shape * (1.0 - c + z * c.sqrt()).powi(3);
    if !(x > 0.0) || !x.is_finite() {
        let lower_prob = if upper { 1.0 - prob } else { prob };
        x = (lower_prob * shape * ln_gamma(shape).exp()).powf(1.0 / shape).max(1e-300);
    }
    let lg = ln_gamma(shape);
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    for _ in 0..300 {
        // g > 0 means x is too large
        let g = if upper { prob - gamma_ur(shape, x) } else { gamma_lr(shape, x) - prob };
        if g > 0.0 {
            hi = x;
        } else if g < 0.0 {
            lo = x;
        } else {
            return x;
        }
        let density = ((shape - 1.0) * x.ln() - x - lg).exp();
        let mut next = x - g / density;
        if !next.is_finite() || next <= lo || next >= hi {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x.max(lo) };
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x {
            return next;
        }
        x = next;
    }
    x
}

/// `n` rows from `N(0, sigma)`.
pub fn sample_gaussian<R: Rng + ?Sized>(sigma: &DMatrix<f64>, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| QuiltError::NotPositiveDefinite("sampling covariance".into()))?;
    let e = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(e * chol.l().transpose())
}

/// Gaussian draw pushed through the marginals: column `j` uses `marginals[j]`.
pub fn sample_copula<R: Rng + ?Sized>(
    sigma: &DMatrix<f64>,
    n: usize,
    marginals: &[Marginal],
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    if marginals.len() != p {
        return Err(QuiltError::DimensionMismatch {
            expected: p,
            found: marginals.len(),
        });
    }
    for m in marginals {
        m.validate()?;
    }
    for i in 0..p {
        if (sigma[(i, i)] - 1.0).abs() > 1e-12 {
            return Err(QuiltError::InvalidInput("copula covariance must have unit diagonal".into()));
        }
    }
    let mut z = sample_gaussian(sigma, n, rng)?;
    for (j, m) in marginals.iter().enumerate() {
        for v in z.column_mut(j).iter_mut() {
            *v = m.transform(*v);
        }
    }
    Ok(z)
}

/// Random chained design: variables are shuffled and covered by `k` windows
/// of `o` consecutive positions. Consecutive windows overlap in
/// `⌊(k·o − p)/(k − 1)⌋` positions, the remainder going to the earliest
/// overlaps.
pub fn assign_blocks<R: Rng + ?Sized>(p: usize, k: usize, o: usize, n: usize, rng: &mut R) -> Result<BlockDesign> {
    if k == 0 || o == 0 || o > p {
        return Err(QuiltError::Infeasible(format!("need 1 ≤ o ≤ p and k ≥ 1 (p = {p}, k = {k}, o = {o})")));
    }
    if k == 1 && o != p {
        return Err(QuiltError::Infeasible(format!("a single block must hold all {p} variables, got o = {o}")));
    }
    if k * o < p + k - 1 {
        return Err(QuiltError::Infeasible(format!(
            "{k} blocks of size {o} cannot chain-cover {p} variables (need k·o ≥ p + k − 1)"
        )));
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(rng);
    let mut blocks = Vec::with_capacity(k);
    let mut start = 0;
    if k > 1 {
        let total = k * o - p;
        let base = total / (k - 1);
        let extra = total % (k - 1);
        for b in 0..k {
            blocks.push(order[start..start + o].to_vec());
            if b + 1 < k {
                let overlap = base + usize::from(b < extra);
                start += o - overlap;
            }
        }
    } else {
        blocks.push(order.clone());
    }
    BlockDesign::validated(p, blocks, vec![n; k])
}

/// Generator of the true model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Precision { graph: GraphSpec },
    Spiked { spiked: SpikedSpec },
}

/// How blocks share samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Fresh draws for every block.
    #[default]
    Independent,
    /// One draw of all variables, each block reading its own columns.
    Shared,
}

/// Parameters of one simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub p: usize,
    pub model: ModelSpec,
    pub marginal: Marginal,
    pub samples_per_block: usize,
    /// Number of blocks `K`.
    pub blocks: usize,
    /// Variables per block `o`.
    pub block_size: usize,
    #[serde(default)]
    pub sampling: SamplingMode,
}

/// Independent seeds for the three random stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub graph: u64,
    pub design: u64,
    pub data: u64,
}

impl StageSeeds {
    /// All three stages from one seed.
    pub fn from_seed(seed: u64) -> Self {
        Self {
            graph: derive_seed(seed, &[0]),
            design: derive_seed(seed, &[1]),
            data: derive_seed(seed, &[2]),
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed of `root` along a path of stream labels:
/// `s ← splitmix64(s ⊕ splitmix64(label))` for each label in turn.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |s, &label| splitmix64(s ^ splitmix64(label)))
}

/// Everything a benchmark replicate needs.
#[derive(Debug, Clone)]
pub struct SimulatedScenario {
    pub design: BlockDesign,
    /// One `n × |V_k|` data matrix per block, columns in block order.
    pub blocks: Vec<DMatrix<f64>>,
    pub truth: TrueModel,
}

/// The true model of a scenario.
pub fn generate_model(config: &ScenarioConfig, seed: u64) -> Result<TrueModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = match &config.model {
        ModelSpec::Precision { graph } => generate_precision(config.p, graph, &mut rng)?.0,
        ModelSpec::Spiked { spiked } => generate_spiked_precision(config.p, spiked, &mut rng)?,
    };
    TrueModel::from_precision(&theta)
}

/// Draws a scenario: model, random design and per-block data.
pub fn simulate_scenario(config: &ScenarioConfig, seeds: StageSeeds) -> Result<SimulatedScenario> {
    config.marginal.validate()?;
    if config.samples_per_block < 3 {
        return Err(QuiltError::InvalidInput("need at least 3 samples per block".into()));
    }
    let truth = generate_model(config, seeds.graph)?;
    let mut design_rng = ChaCha8Rng::seed_from_u64(seeds.design);
    let design = assign_blocks(
        config.p,
        config.blocks,
        config.block_size,
        config.samples_per_block,
        &mut design_rng,
    )?;
    let blocks = sample_blocks(&truth.sigma, &design, config.marginal, config.sampling, seeds.data)?;
    Ok(SimulatedScenario { design, blocks, truth })
}

/// Per-block copula samples under the design.
pub fn sample_blocks(
    sigma: &DMatrix<f64>,
    design: &BlockDesign,
    marginal: Marginal,
    mode: SamplingMode,
    seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    match mode {
        SamplingMode::Independent => design
            .blocks()
            .iter()
            .zip(design.sample_sizes())
            .enumerate()
            .map(|(k, (block, &n))| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let sub = principal(sigma, block);
                sample_copula(&sub, n, &vec![marginal; block.len()], &mut rng)
            })
            .collect(),
        SamplingMode::Shared => {
            let n = design.sample_sizes().iter().copied().max().unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let full = sample_copula(sigma, n, &vec![marginal; design.p()], &mut rng)?;
            Ok(design
                .blocks()
                .iter()
                .zip(design.sample_sizes())
                .map(|(block, &nk)| DMatrix::from_fn(nk, block.len(), |i, a| full[(i, block[a])]))
                .collect())
        }
    }
}
