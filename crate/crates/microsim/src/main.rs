use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use microsim::fixture::{generate, FixtureSpec};
use microsim::pipeline::{self, Exit, RunOptions};

/// Spatial microsimulation: IPF reweighting, TRS integerisation, validation
/// and small-area poverty indicators.
#[derive(Parser)]
#[command(name = "microsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check constraint tables for consistency and survey coverage.
    Check(RunArgs),
    /// Fit weights and write the integer synthetic population.
    Synthesize(RunArgs),
    /// Internal and external validation of a synthetic population.
    Validate(RunArgs),
    /// Zone-level income, poverty and MPI indicators.
    Indicators(RunArgs),
    /// All stages in order.
    Pipeline(RunArgs),
    /// Write a synthetic ground-truth input set.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Proceed when zone totals disagree by more than 5% across tables.
    #[arg(long)]
    allow_inconsistent: bool,
    /// Treat non-converged zones as an error.
    #[arg(long)]
    strict: bool,
    /// Also write the fractional weight matrix.
    #[arg(long)]
    dump_weights: bool,
    /// Earlier output directory whose indicators.csv to compare against.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Population file for validate/indicators (default: <out>/population.csv).
    #[arg(long)]
    population: Option<PathBuf>,
    /// Overrides ipf.max_iterations.
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2011)]
    seed: u64,
    #[arg(long, default_value_t = 59)]
    zones: usize,
    #[arg(long, default_value_t = 300_000)]
    persons: usize,
    #[arg(long, default_value_t = 3000)]
    survey: usize,
}

impl From<RunArgs> for RunOptions {
    fn from(a: RunArgs) -> Self {
        RunOptions {
            config: a.config,
            seed: a.seed,
            out: a.out,
            allow_inconsistent: a.allow_inconsistent,
            strict: a.strict,
            dump_weights: a.dump_weights,
            compare: a.compare,
            population: a.population,
            max_iters: a.max_iters,
            threads: a.threads,
            quiet: a.quiet,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Exit> {
    match cli.command {
        Command::Check(a) => pipeline::cmd_check(&a.into()),
        Command::Synthesize(a) => pipeline::cmd_synthesize(&a.into()),
        Command::Validate(a) => pipeline::cmd_validate(&a.into()),
        Command::Indicators(a) => pipeline::cmd_indicators(&a.into()),
        Command::Pipeline(a) => pipeline::cmd_pipeline(&a.into()),
        Command::Generate(a) => {
            let spec = FixtureSpec {
                zones: a.zones,
                persons: a.persons,
                survey: a.survey,
                seed: a.seed,
            };
            let fx = generate(&a.out, &spec)?;
            println!("wrote {} persons over {} zones to {}", fx.persons, fx.zone_ids.len(), fx.dir.display());
            Ok(Exit::Success)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match run(Cli::parse()) {
        Ok(exit) => ExitCode::from(exit.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Exit::Error.code() as u8)
        }
    }
}
