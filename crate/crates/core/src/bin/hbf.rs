use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hbf::cli::{self, CommonArgs, EXIT_OK, EXIT_ORACLE_MISMATCH, ORACLE_TOLERANCE};
use hbf::oracle::GridOptions;

#[derive(Parser)]
#[command(name = "hbf", version, about = "Hybrid Bernoulli filter scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config field, e.g. `--set ch.p_d=1.0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl From<Common> for CommonArgs {
    fn from(c: Common) -> Self {
        CommonArgs {
            config: c.config,
            out: c.out,
            seed: c.seed,
            overrides: c.overrides,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and filter one trial, writing trace.csv.
    Run(Common),
    /// Monte-Carlo study, writing mcstats.csv.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Compare the mixture filter against the grid recursion (scalar scenarios only).
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 401)]
        grid_points: usize,
        #[arg(long, default_value_t = ORACLE_TOLERANCE)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Run(common) => cli::cmd_run(&common.into()).map(|(truth, _)| {
            println!("wrote {} steps", truth.x.len());
            EXIT_OK
        }),
        Command::Montecarlo { common, trials } => cli::cmd_montecarlo(&common.into(), trials).map(|stats| {
            println!("aggregated {} trials", stats.trials);
            EXIT_OK
        }),
        Command::Oracle {
            common,
            grid_points,
            tolerance,
        } => {
            let grid = GridOptions {
                points: grid_points,
                ..GridOptions::default()
            };
            cli::cmd_oracle(&common.into(), &grid, tolerance).map(|outcome| {
                println!("max relative delta {:e} (tolerance {:e})", outcome.max_delta, outcome.tolerance);
                if outcome.passed() {
                    EXIT_OK
                } else {
                    EXIT_ORACLE_MISMATCH
                }
            })
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
