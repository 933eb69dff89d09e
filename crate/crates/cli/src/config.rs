//! Config file schemas and strict loading.

use std::path::{Path, PathBuf};

use npn_quilt::eval::{Method, Scenario, TuningGrid, DEFAULT_EBIC_GAMMA};
use npn_quilt::glasso::SolverOptions;
use npn_quilt::lrgq::BsvdOptions;
use npn_quilt::simgen::ScenarioConfig;
use npn_quilt::Statistic;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Parses `text` into `T`, rejecting every key `T` does not know about.
///
/// The typed value is serialized back and compared with the input tree; keys
/// present in the input but absent from the round trip are unknown. This
/// reports all of them at once rather than the first one serde trips on.
pub fn parse_strict<T: DeserializeOwned + Serialize>(text: &str) -> CliResult<T> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let typed: T = toml::Value::Table(raw.clone())
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    let back = toml::Value::try_from(&typed).map_err(|e| CliError::Config(e.to_string()))?;
    let mut unknown = Vec::new();
    collect_unknown(&toml::Value::Table(raw), &back, "", &mut unknown);
    if unknown.is_empty() {
        Ok(typed)
    } else {
        Err(CliError::UnknownKeys(unknown))
    }
}

fn collect_unknown(given: &toml::Value, known: &toml::Value, path: &str, out: &mut Vec<String>) {
    match (given, known) {
        (toml::Value::Table(g), toml::Value::Table(k)) => {
            for (key, value) in g {
                let child = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                match k.get(key) {
                    Some(kv) => collect_unknown(value, kv, &child, out),
                    None => out.push(child),
                }
            }
        }
        (toml::Value::Array(g), toml::Value::Array(k)) => {
            for (i, (gv, kv)) in g.iter().zip(k).enumerate() {
                collect_unknown(gv, kv, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

pub fn load<T: DeserializeOwned + Serialize>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_strict(&text)
}

/// Resolves `p` against the directory of the file that mentioned it.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

fn default_statistic() -> Statistic {
    Statistic::Rho
}

/// Glasso iteration limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_max_iterations() -> usize {
    SolverOptions::default().max_iterations
}

fn default_tolerance() -> f64 {
    SolverOptions::default().tolerance
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> CliResult<SolverOptions> {
        if self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(CliError::Config("solver needs max_iterations ≥ 1 and tolerance > 0".into()));
        }
        Ok(SolverOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            ..SolverOptions::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    #[serde(default)]
    pub seed: u64,
    pub scenario: ScenarioConfig,
}

/// Tuning-parameter choice without ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// Extended BIC over the penalty path.
    #[default]
    Ebic,
    /// Edge-stability selection over subsamples.
    Stars,
    /// Best F1 against the `truth` edge list.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    #[serde(default)]
    pub rule: SelectionRule,
    /// Fixed penalty; skips the search.
    pub lambda: Option<f64>,
    /// Edge threshold for observed pairs. Defaults to twice `tau2`.
    pub tau1: Option<f64>,
    /// Distortion threshold. Defaults to the rate rule scaled by
    /// `tuning.tau2_scale`.
    pub tau2: Option<f64>,
    /// Low-rank completion rank. Defaults to the BIC choice over
    /// `tuning.ranks`.
    pub rank: Option<usize>,
    #[serde(default = "default_ebic_gamma")]
    pub ebic_gamma: f64,
    #[serde(default = "default_subsamples")]
    pub stars_subsamples: usize,
    #[serde(default = "default_stars_threshold")]
    pub stars_threshold: f64,
}

fn default_ebic_gamma() -> f64 {
    DEFAULT_EBIC_GAMMA
}

fn default_subsamples() -> usize {
    20
}

fn default_stars_threshold() -> f64 {
    0.05
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            rule: SelectionRule::default(),
            lambda: None,
            tau1: None,
            tau2: None,
            rank: None,
            ebic_gamma: default_ebic_gamma(),
            stars_subsamples: default_subsamples(),
            stars_threshold: default_stars_threshold(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    /// Design file listing variables and block files.
    pub design: PathBuf,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_statistic")]
    pub statistic: Statistic,
    /// Optional true edge list, for metrics and oracle tuning.
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub tuning: TuningGrid,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub bsvd: BsvdOptions,
}

fn default_method() -> Method {
    Method::MadgqNpn
}

/// One sweep cell; unset fields come from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub id: String,
    pub blocks: Option<usize>,
    pub block_size: Option<usize>,
    pub samples_per_block: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_statistic")]
    pub statistic: Statistic,
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
    #[serde(default)]
    pub tuning: TuningGrid,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub bsvd: BsvdOptions,
    pub base: ScenarioConfig,
    pub scenarios: Vec<ScenarioEntry>,
}

fn default_replicates() -> usize {
    50
}

fn default_threads() -> usize {
    1
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_failure_rate() -> f64 {
    0.2
}

impl BenchmarkConfig {
    pub fn scenarios(&self) -> CliResult<Vec<Scenario>> {
        if self.scenarios.is_empty() {
            return Err(CliError::Config("benchmark needs at least one [[scenarios]] entry".into()));
        }
        let mut ids: Vec<&str> = self.scenarios.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("scenario ids must be unique".into()));
        }
        Ok(self
            .scenarios
            .iter()
            .map(|e| {
                let mut config = self.base.clone();
                config.blocks = e.blocks.unwrap_or(config.blocks);
                config.block_size = e.block_size.unwrap_or(config.block_size);
                config.samples_per_block = e.samples_per_block.unwrap_or(config.samples_per_block);
                Scenario {
                    id: e.id.clone(),
                    config,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    /// Headered CSV of the true precision matrix.
    pub precision: PathBuf,
    /// Design file; only the variable lists and sample sizes are read.
    pub design: PathBuf,
}

/// Variables and blocks of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    pub variables: Vec<String>,
    pub blocks: Vec<BlockEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub variables: Vec<String>,
    pub samples: usize,
    /// Data file for the block, relative to the design file.
    pub file: Option<PathBuf>,
}
