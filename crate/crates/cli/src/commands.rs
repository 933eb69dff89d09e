use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use npn_quilt::eval::{
    bic_rank, compare_edges, ebic, run_sweep, stability_select, tune_method, BenchmarkOptions, Method,
    RecoveryMetrics, Restriction, StabilityOptions, SweepResult, TuningGrid,
};
use npn_quilt::glasso::{self, PenaltyMatrix, SolveReport, SolverOptions};
use npn_quilt::lrgq::{run_lrgq, zero_filled, BsvdOptions};
use npn_quilt::madgq::{check_assumptions, default_tau2, fit_madgq, population_diagnostics, MadgqThresholds};
use npn_quilt::rank_corr::{estimate_correlation, CorrelationOptions};
use npn_quilt::simgen::{simulate_scenario, StageSeeds};
use npn_quilt::types::ZERO_SNAP;
use npn_quilt::{BlockDesign, EdgeSet, MaskedCorrelation, PrecisionEstimate, QuiltError, Statistic};
use serde::Serialize;

use crate::config::{
    self, BenchmarkConfig, BlockEntry, DesignFile, DiagnoseConfig, EstimateConfig, SelectionRule, SimulateConfig,
};
use crate::error::{CliError, CliResult};
use crate::io::{self, fmt_f64, Manifest, OutputDir};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub statistic: Option<Statistic>,
    pub method: Option<Method>,
    pub replicates: Option<usize>,
}

fn variable_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("V{i}")).collect()
}

pub fn simulate(config_path: &Path, out: &Path, over: &Overrides) -> CliResult<()> {
    let mut cfg: SimulateConfig = config::load(config_path)?;
    cfg.seed = over.seed.unwrap_or(cfg.seed);
    let sim = simulate_scenario(&cfg.scenario, StageSeeds::from_seed(cfg.seed))?;
    let names = variable_names(cfg.scenario.p);
    let mut dir = OutputDir::create(out)?;

    let mut entries = Vec::new();
    for (k, (block, data)) in sim.design.blocks().iter().zip(&sim.blocks).enumerate() {
        let file = format!("block_{}.csv", k + 1);
        let header: Vec<String> = block.iter().map(|&i| names[i].clone()).collect();
        dir.write(&file, &io::matrix_csv(&header, data))?;
        entries.push(BlockEntry {
            variables: header,
            samples: data.nrows(),
            file: Some(file.into()),
        });
    }
    let design = DesignFile {
        variables: names.clone(),
        blocks: entries,
    };
    let text = toml::to_string(&design).map_err(|e| CliError::Config(e.to_string()))?;
    dir.write("design.toml", text.as_bytes())?;
    dir.write("truth_edges.csv", &io::edges_csv(&names, &sim.truth.edges, Some(&sim.design.pair_mask())))?;
    dir.write("truth_precision.csv", &io::matrix_csv(&names, &sim.truth.theta))?;
    dir.write("truth_correlation.csv", &io::matrix_csv(&names, &sim.truth.sigma))?;
    log::info!("simulated {} blocks into {}", sim.blocks.len(), out.display());
    Manifest::new("simulate", &cfg, cfg.seed)?.finish(&mut dir)
}

/// A design file resolved to indices, plus the block data when requested.
struct LoadedDesign {
    names: Vec<String>,
    design: BlockDesign,
    blocks: Vec<DMatrix<f64>>,
    inputs: BTreeMap<String, String>,
}

fn load_design(path: &Path, with_data: bool) -> CliResult<LoadedDesign> {
    let file: DesignFile = config::load(path)?;
    let index: BTreeMap<&str, usize> = file.variables.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    if index.len() != file.variables.len() {
        return Err(CliError::input(path, "variable names must be unique"));
    }
    let mut inputs = BTreeMap::new();
    inputs.insert(path.display().to_string(), io::hash_file(path)?);
    let mut blocks = Vec::new();
    let mut members = Vec::new();
    let mut sizes = Vec::new();
    for (k, entry) in file.blocks.iter().enumerate() {
        let idx = entry
            .variables
            .iter()
            .map(|n| {
                index
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| CliError::input(path, format!("block {} names unknown variable `{n}`", k + 1)))
            })
            .collect::<CliResult<Vec<usize>>>()?;
        if with_data {
            let rel = entry
                .file
                .as_ref()
                .ok_or_else(|| CliError::input(path, format!("block {} has no data file", k + 1)))?;
            let data_path = config::resolve(path, rel);
            let (header, data) = io::read_matrix(&data_path)?;
            if header != entry.variables {
                return Err(CliError::input(&data_path, "column names differ from the design's block variables"));
            }
            if data.nrows() != entry.samples {
                return Err(CliError::input(
                    &data_path,
                    format!("{} rows but the design declares {} samples", data.nrows(), entry.samples),
                ));
            }
            inputs.insert(data_path.display().to_string(), io::hash_file(&data_path)?);
            blocks.push(data);
        }
        members.push(idx);
        sizes.push(entry.samples);
    }
    let design = BlockDesign::new(file.variables.len(), members, sizes)?;
    design.validate().into_result()?;
    Ok(LoadedDesign {
        names: file.variables,
        design,
        blocks,
        inputs,
    })
}

/// One fit of a method at fixed tuning parameters.
struct Fitted {
    theta: PrecisionEstimate,
    edges: EdgeSet,
    /// The matrix the graphical lasso was run on.
    input: DMatrix<f64>,
    report: SolveReport,
    superset_nodes: Option<Vec<usize>>,
}

struct Fixed<'a> {
    method: Method,
    design: &'a BlockDesign,
    tau1: f64,
    tau2: f64,
    rank: usize,
    bsvd: &'a BsvdOptions,
    solver: &'a SolverOptions,
}

impl Fixed<'_> {
    fn fit(&self, sigma: &MaskedCorrelation, lambda: f64) -> npn_quilt::Result<Fitted> {
        let pen = PenaltyMatrix::uniform(self.design.p(), lambda)?;
        match self.method {
            Method::MadgqNpn => {
                let fit = fit_madgq(self.design, sigma, &pen, self.solver)?;
                let q = fit.quilt(MadgqThresholds::new(self.tau1, self.tau2)?)?;
                Ok(Fitted {
                    edges: q.edges(),
                    theta: fit.theta_hat,
                    input: sigma.values().clone(),
                    report: fit.report,
                    superset_nodes: Some(q.node_set_w.into_iter().collect()),
                })
            }
            Method::BsvdNpn => {
                let r = run_lrgq(self.design, sigma, self.rank, &pen, self.bsvd, self.solver)?;
                Ok(Fitted {
                    theta: r.theta,
                    edges: r.edges,
                    input: r.completed,
                    report: r.report,
                    superset_nodes: None,
                })
            }
            Method::ZeroImpute => {
                let filled = zero_filled(sigma, self.bsvd.ridge);
                let opts = SolverOptions {
                    zero_constraint: None,
                    ..self.solver.clone()
                };
                let (theta, report) = glasso::solve_with_report(&filled, &pen, &opts)?;
                let edges = EdgeSet::from_support(theta.theta(), ZERO_SNAP);
                Ok(Fitted {
                    theta,
                    edges,
                    input: filled,
                    report,
                    superset_nodes: None,
                })
            }
        }
    }
}

#[derive(Serialize)]
struct SelectionReport {
    method: Method,
    statistic: Statistic,
    rule: &'static str,
    lambda: f64,
    tau1: Option<f64>,
    tau2: Option<f64>,
    rank: Option<usize>,
    /// `(lambda, score)` for every penalty tried.
    scores: Vec<(f64, Option<f64>)>,
    edges: usize,
    edges_observed: usize,
    edges_unobserved: usize,
    superset_nodes: Option<Vec<usize>>,
    solver_sweeps: usize,
    solver_duality_gap: f64,
    runtime_seconds: f64,
    metrics: Option<BTreeMap<&'static str, RecoveryMetrics>>,
}

pub fn estimate(config_path: &Path, out: &Path, over: &Overrides) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: EstimateConfig = config::load(config_path)?;
    cfg.method = over.method.unwrap_or(cfg.method);
    cfg.statistic = over.statistic.unwrap_or(cfg.statistic);
    cfg.seed = over.seed.unwrap_or(cfg.seed);
    let solver = cfg.solver.options()?;
    let design_path = config::resolve(config_path, &cfg.design);
    let loaded = load_design(&design_path, true)?;
    let design = &loaded.design;
    let p = design.p();
    let truth = match &cfg.truth {
        Some(t) => Some(io::read_edges(&config::resolve(config_path, t), p)?),
        None => None,
    };

    let correlation = CorrelationOptions::with_statistic(cfg.statistic);
    let sigma = estimate_correlation(design, &loaded.blocks, &correlation)?;
    let sel = &cfg.selection;
    let tau2 = sel.tau2.unwrap_or_else(|| default_tau2(design, cfg.tuning.tau2_scale));
    let rank = match (cfg.method, sel.rank) {
        (Method::BsvdNpn, Some(r)) => r,
        (Method::BsvdNpn, None) => bic_rank(&sigma, design, &cfg.tuning.ranks, cfg.bsvd.floor)?.rank,
        _ => 0,
    };
    let mut fixed = Fixed {
        method: cfg.method,
        design,
        tau1: sel.tau1.unwrap_or(2.0 * tau2),
        tau2,
        rank,
        bsvd: &cfg.bsvd,
        solver: &solver,
    };

    let (lambda, scores, rule) = match (sel.lambda, sel.rule) {
        (Some(l), _) => (l, vec![(l, None)], "fixed"),
        (None, SelectionRule::Ebic) => {
            let n = design.min_sample_size() as f64;
            let lambdas = cfg.tuning.lambdas_for(&sigma)?;
            let mut scores = Vec::new();
            let mut last_error = None;
            for &l in &lambdas {
                let score = match fixed.fit(&sigma, l).and_then(|f| ebic(&f.input, &f.theta, n, sel.ebic_gamma)) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        log::warn!("lambda {l} failed: {e}");
                        last_error = Some(e);
                        None
                    }
                };
                scores.push((l, score));
            }
            let best = scores
                .iter()
                .filter_map(|&(l, s)| s.map(|s| (l, s)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .ok_or_else(|| QuiltError::AllCandidatesFailed(last_error.map_or_else(String::new, |e| e.to_string())))?;
            (best.0, scores, "ebic")
        }
        (None, SelectionRule::Stars) => {
            let lambdas = cfg.tuning.lambdas_for(&sigma)?;
            let options = StabilityOptions {
                n_subsamples: sel.stars_subsamples,
                threshold: sel.stars_threshold,
                seed: cfg.seed,
                ..StabilityOptions::default()
            };
            let pick = stability_select(&loaded.blocks, lambdas.len(), &options, |sub| {
                let s = estimate_correlation(design, sub, &correlation)?;
                lambdas.iter().map(|&l| Ok(fixed.fit(&s, l)?.edges)).collect()
            })?;
            let scores = lambdas.iter().copied().zip(pick.monotone.iter().map(|&v| Some(v))).collect();
            (lambdas[pick.index], scores, "stars")
        }
        (None, SelectionRule::Oracle) => {
            let truth = truth
                .as_ref()
                .ok_or_else(|| CliError::Config("selection rule `oracle` needs a `truth` edge list".into()))?;
            let grid = TuningGrid {
                ranks: if cfg.method == Method::BsvdNpn { vec![rank] } else { cfg.tuning.ranks.clone() },
                tau1: match sel.tau1 {
                    Some(t) => vec![t],
                    None => cfg.tuning.tau1.clone(),
                },
                ..cfg.tuning.clone()
            };
            let outcome = tune_method(cfg.method, design, &sigma, truth, &grid, &solver, &cfg.bsvd)?;
            let l = outcome.params.lambda.expect("every method tunes lambda");
            if let Some(t) = outcome.params.tau1 {
                fixed.tau1 = t;
            }
            (l, vec![(l, Some(outcome.all.f1))], "oracle")
        }
    };

    let fit = fixed.fit(&sigma, lambda)?;
    let mask = design.pair_mask();
    let is_madgq = cfg.method == Method::MadgqNpn;
    let metrics = match &truth {
        Some(t) => {
            let mut m = BTreeMap::new();
            m.insert("all", compare_edges(&fit.edges, t, Restriction::All)?);
            m.insert("observed", compare_edges(&fit.edges, t, Restriction::Observed(&mask))?);
            m.insert("unobserved", compare_edges(&fit.edges, t, Restriction::Unobserved(&mask))?);
            Some(m)
        }
        None => None,
    };
    let report = SelectionReport {
        method: cfg.method,
        statistic: cfg.statistic,
        rule,
        lambda,
        tau1: is_madgq.then_some(fixed.tau1),
        tau2: is_madgq.then_some(tau2),
        rank: (cfg.method == Method::BsvdNpn).then_some(rank),
        scores,
        edges: fit.edges.len(),
        edges_observed: fit.edges.restrict(&mask, true).len(),
        edges_unobserved: fit.edges.restrict(&mask, false).len(),
        superset_nodes: fit.superset_nodes.map(|v| v.into_iter().map(|i| i + 1).collect()),
        solver_sweeps: fit.report.sweeps,
        solver_duality_gap: fit.report.duality_gap,
        runtime_seconds: started.elapsed().as_secs_f64(),
        metrics,
    };

    let names = &loaded.names;
    let mut dir = OutputDir::create(out)?;
    dir.write("edges.csv", &io::edges_csv(names, &fit.edges, Some(&mask)))?;
    dir.write("precision.csv", &io::matrix_csv(names, fit.theta.theta()))?;
    dir.write("correlation.csv", &io::matrix_csv(names, sigma.values()))?;
    dir.write("mask.csv", &io::mask_csv(names, &mask))?;
    if cfg.method == Method::BsvdNpn {
        dir.write("completed.csv", &io::matrix_csv(names, &fit.input))?;
    }
    dir.write_json("selection.json", &report)?;
    let mut manifest = Manifest::new("estimate", &cfg, cfg.seed)?;
    manifest.inputs = loaded.inputs;
    manifest.finish(&mut dir)
}

pub fn benchmark(config_path: &Path, out: &Path, over: &Overrides) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg: BenchmarkConfig = config::load(config_path)?;
    cfg.seed = over.seed.unwrap_or(cfg.seed);
    cfg.threads = over.threads.unwrap_or(cfg.threads);
    cfg.statistic = over.statistic.unwrap_or(cfg.statistic);
    cfg.replicates = over.replicates.unwrap_or(cfg.replicates);
    if let Some(m) = over.method {
        cfg.methods = vec![m];
    }
    if cfg.replicates == 0 || cfg.methods.is_empty() || cfg.threads == 0 {
        return Err(CliError::Config("replicates, threads and methods must be nonempty".into()));
    }
    let scenarios = cfg.scenarios()?;
    for s in &scenarios {
        let c = &s.config;
        if c.blocks * c.block_size + 1 < c.p + c.blocks {
            return Err(CliError::Config(format!(
                "scenario `{}`: {} chained blocks of {} variables cannot cover p = {}",
                s.id, c.blocks, c.block_size, c.p
            )));
        }
    }
    let options = BenchmarkOptions {
        methods: cfg.methods.clone(),
        replicates: cfg.replicates,
        root_seed: cfg.seed,
        correlation: CorrelationOptions::with_statistic(cfg.statistic),
        grid: cfg.tuning.clone(),
        solver: cfg.solver.options()?,
        bsvd: cfg.bsvd,
        max_failure_rate: cfg.max_failure_rate,
        threads: cfg.threads,
    };
    let result = run_sweep(&scenarios, &options)?;
    let mut dir = OutputDir::create(out)?;
    write_sweep(&mut dir, &result)?;
    log::info!(
        "{} records in {:.1} s",
        result.records.len(),
        started.elapsed().as_secs_f64()
    );
    Manifest::new("benchmark", &cfg, cfg.seed)?.finish(&mut dir)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_sweep(dir: &mut OutputDir, result: &SweepResult) -> CliResult<()> {
    let ok = result.records.iter().filter_map(|r| r.outcome.as_ref().ok().map(|o| (r, o)));
    let rows = ok.map(|(r, o)| {
        vec![
            r.scenario.clone(),
            r.method.to_string(),
            r.block_size.to_string(),
            r.blocks.to_string(),
            (r.replicate + 1).to_string(),
            opt(o.all.tpr),
            fmt_f64(o.all.fdp),
            fmt_f64(o.all.f1),
        ]
    });
    dir.write(
        "results.csv",
        &io::rows_csv(&["scenario", "method", "o", "K", "replicate", "tpr", "fdp", "f1"], rows),
    )?;

    let detail = result.records.iter().filter_map(|r| r.outcome.as_ref().ok().map(|o| (r, o))).map(|(r, o)| {
        vec![
            r.scenario.clone(),
            r.method.to_string(),
            (r.replicate + 1).to_string(),
            opt(o.observed.tpr),
            fmt_f64(o.observed.fdp),
            opt(o.unobserved.tpr),
            fmt_f64(o.unobserved.fdp),
            o.edges.to_string(),
            opt(o.params.lambda),
            opt(o.params.tau1),
            opt(o.params.tau2),
            o.params.rank.map(|r| r.to_string()).unwrap_or_default(),
        ]
    });
    dir.write(
        "results_detail.csv",
        &io::rows_csv(
            &[
                "scenario", "method", "replicate", "tpr_observed", "fdp_observed", "tpr_unobserved", "fdp_unobserved",
                "edges", "lambda", "tau1", "tau2", "rank",
            ],
            detail,
        ),
    )?;

    let failures = result.records.iter().filter_map(|r| {
        r.outcome
            .as_ref()
            .err()
            .map(|e| vec![r.scenario.clone(), r.method.to_string(), (r.replicate + 1).to_string(), e.clone()])
    });
    dir.write("failures.csv", &io::rows_csv(&["scenario", "method", "replicate", "error"], failures))?;

    let mut summary = Vec::new();
    for c in &result.cells {
        for (metric, stats) in [("tpr", c.tpr), ("fdp", c.fdp), ("f1", c.f1)] {
            if let Some(s) = stats {
                summary.push(vec![
                    c.scenario.clone(),
                    c.method.to_string(),
                    c.block_size.to_string(),
                    c.blocks.to_string(),
                    metric.to_string(),
                    fmt_f64(s.mean),
                    if s.sd_defined { fmt_f64(s.sd) } else { String::new() },
                    s.count.to_string(),
                    c.failed.to_string(),
                ]);
            }
        }
    }
    dir.write(
        "summary.csv",
        &io::rows_csv(&["scenario", "method", "o", "K", "metric", "mean", "sd", "count", "failed"], summary),
    )
}

#[derive(Serialize)]
struct DiagnoseReport {
    p: usize,
    delta: f64,
    nu: Option<f64>,
    psi: Option<f64>,
    tau1_window: Option<(f64, f64)>,
    max_degree: usize,
    max_degree_tilde: usize,
    nonzeros_tilde: usize,
    kappa_tilde: f64,
    kappa_sigma_tilde: f64,
    kappa_gamma_tilde: f64,
    incoherence: f64,
    weak_distortion: bool,
    connectivity: bool,
    small_distortion_visible: bool,
    true_edges_observed: usize,
    true_edges_unobserved: usize,
    superset_size: usize,
}

pub fn diagnose(config_path: &Path, out: &Path, over: &Overrides) -> CliResult<()> {
    let cfg: DiagnoseConfig = config::load(config_path)?;
    let precision_path = config::resolve(config_path, &cfg.precision);
    let design_path = config::resolve(config_path, &cfg.design);
    let loaded = load_design(&design_path, false)?;
    let (names, theta) = io::read_matrix(&precision_path)?;
    if names != loaded.names || theta.nrows() != theta.ncols() {
        return Err(CliError::input(&precision_path, "precision matrix must be square with the design's variable names"));
    }
    let design = &loaded.design;
    let diag = population_diagnostics(&theta, design)?;
    let assumptions = check_assumptions(&theta, design, &diag);
    let superset = diag.minimal_superset(design)?;
    let report = DiagnoseReport {
        p: design.p(),
        delta: diag.delta,
        nu: diag.nu,
        psi: diag.psi,
        tau1_window: diag.tau1_window(),
        max_degree: diag.d,
        max_degree_tilde: diag.d_tilde,
        nonzeros_tilde: diag.s_tilde,
        kappa_tilde: diag.kappa_tilde,
        kappa_sigma_tilde: diag.kappa_sigma_tilde,
        kappa_gamma_tilde: diag.kappa_gamma_tilde,
        incoherence: diag.alpha,
        weak_distortion: assumptions.weak_distortion,
        connectivity: assumptions.connectivity,
        small_distortion_visible: assumptions.small_distortion_visible,
        true_edges_observed: diag.true_edges_o.len(),
        true_edges_unobserved: diag.true_edges_oc.len(),
        superset_size: superset.len(),
    };
    let mut dir = OutputDir::create(out)?;
    dir.write_json("diagnostics.json", &report)?;
    dir.write("superset_edges.csv", &io::edges_csv(&names, &superset, None))?;
    dir.write("population_precision.csv", &io::matrix_csv(&names, &diag.theta_tilde))?;
    let mut manifest = Manifest::new("diagnose", &cfg, over.seed.unwrap_or(0))?;
    manifest.inputs = loaded.inputs;
    manifest
        .inputs
        .insert(precision_path.display().to_string(), io::hash_file(&precision_path)?);
    manifest.finish(&mut dir)
}
