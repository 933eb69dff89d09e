//! `npnquilt`: simulate, estimate, benchmark and diagnose graph quilting runs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use npn_quilt::eval::Method;
use npn_quilt::Statistic;

use commands::Overrides;

#[derive(Parser)]
#[command(name = "npnquilt", version, about = "Nonparanormal graph quilting from block-observed data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a scenario: per-block data, design and true graph.
    Simulate(Common),
    /// Estimate a graph from per-block data files.
    Estimate(Common),
    /// Run a replicated sweep of scenarios and methods.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Replicates per scenario, overriding the config.
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Population diagnostics of a true precision matrix under a design.
    Diagnose(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replicate fan-out.
    #[arg(long)]
    threads: Option<usize>,
    /// Rank statistic: rho (Spearman) or tau (Kendall).
    #[arg(long)]
    statistic: Option<Statistic>,
    #[arg(long)]
    method: Option<Method>,
}

impl Common {
    fn overrides(&self, replicates: Option<usize>) -> Overrides {
        Overrides {
            seed: self.seed,
            threads: self.threads,
            statistic: self.statistic,
            method: self.method,
            replicates,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QUILT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => commands::simulate(&c.config, &c.out, &c.overrides(None)),
        Command::Estimate(c) => commands::estimate(&c.config, &c.out, &c.overrides(None)),
        Command::Benchmark { common, replicates } => {
            commands::benchmark(&common.config, &common.out, &common.overrides(*replicates))
        }
        Command::Diagnose(c) => commands::diagnose(&c.config, &c.out, &c.overrides(None)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
