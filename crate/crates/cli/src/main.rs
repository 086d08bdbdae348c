//! `copt`: c-optimal experimental design search from a JSON problem config.

mod commands;
mod config;
mod exit;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use copt_core::{Algorithm, UnitId};

use commands::{DesignSource, OptimizeOptions, VerifyOptions};
use config::Config;
use exit::{CliError, CliResult};

/// Environment variable that overrides `--threads`.
const THREADS_ENV: &str = "COPT_THREADS";

#[derive(Parser)]
#[command(name = "copt", version, about = "c-optimal experimental design search for GLMMs")]
struct Cli {
    /// Worker threads; defaults to the available cores. COPT_THREADS overrides.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a design of m units with the configured algorithm.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Override the configured algorithm (local, greedy, reverse_greedy).
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: Option<Algorithm>,
        /// Override the number of random starts.
        #[arg(long)]
        starts: Option<usize>,
        /// Override the seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write histogram.csv of per-start relative efficiencies.
        #[arg(long)]
        histogram: bool,
    },
    /// Compare the best combinatorial design with the best rounding of weights.
    Compare {
        #[command(flatten)]
        common: Common,
        /// JSON file of weights over duplicate classes.
        weights: PathBuf,
        /// Use exhaustive enumeration for the combinatorial side.
        #[arg(long)]
        brute_force: bool,
    },
    /// Round weights over duplicate classes to m units with every method.
    Round {
        #[command(flatten)]
        common: Common,
        /// JSON file of weights over duplicate classes.
        weights: PathBuf,
    },
    /// Check a design against the verification oracles.
    Verify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        design: DesignArgs,
        /// Monte Carlo iterations per model; 0 skips the estimate.
        #[arg(long, default_value_t = 100_000)]
        mc_iter: usize,
        /// Monte Carlo seed.
        #[arg(long, default_value_t = 0)]
        mc_seed: u64,
        /// Compare against the exhaustive global optimum of the same size.
        #[arg(long)]
        brute_force: bool,
    },
    /// Objective of a given design.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        design: DesignArgs,
    },
}

#[derive(Args)]
struct Common {
    /// Problem configuration (JSON).
    config: PathBuf,
    /// Output directory.
    #[arg(short, long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct DesignArgs {
    /// Design CSV with a unit_id column.
    #[arg(long, conflicts_with = "units")]
    design: Option<PathBuf>,
    /// Comma-separated unit ids.
    #[arg(long, value_delimiter = ',')]
    units: Option<Vec<UnitId>>,
}

impl DesignArgs {
    fn source(self) -> Option<DesignSource> {
        match (self.design, self.units) {
            (Some(p), _) => Some(DesignSource::Csv(p)),
            (None, Some(u)) => Some(DesignSource::List(u)),
            (None, None) => None,
        }
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown algorithm {s:?}; expected local, greedy or reverse_greedy"))
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::config(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        ),
        Err(_) => flag,
    };
    if n == Some(0) {
        return Err(CliError::config("thread count must be >= 1"));
    }
    Ok(n)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Optimize { common, algorithm, starts, seed, histogram } => {
            let opts = OptimizeOptions { out: common.out, algorithm, starts, seed, histogram };
            commands::optimize(Config::from_path(&common.config)?, &opts)
        }
        Command::Compare { common, weights, brute_force } => {
            commands::compare(Config::from_path(&common.config)?, &weights, &common.out, brute_force)
        }
        Command::Round { common, weights } => {
            commands::round(Config::from_path(&common.config)?, &weights, &common.out)
        }
        Command::Verify { common, design, mc_iter, mc_seed, brute_force } => {
            let opts = VerifyOptions { out: common.out, design: design.source(), mc_iter, mc_seed, brute_force };
            commands::verify(Config::from_path(&common.config)?, &opts)
        }
        Command::Evaluate { common, design } => {
            let source = design.source().ok_or_else(|| CliError::config("evaluate needs --design or --units"))?;
            commands::evaluate(Config::from_path(&common.config)?, &source, &common.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("copt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
