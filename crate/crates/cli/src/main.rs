use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use ordstat_cli::{run, CliError, Computation, ScenarioConfig};

/// Capture and outage probabilities and joint densities of ordered SNR partial sums.
#[derive(Parser)]
#[command(name = "ordstat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Capture probability sweep over T and m.
    Capture(RunArgs),
    /// Outage probability sweep over T, m and alpha.
    Outage(RunArgs),
    /// Joint density on a grid.
    Pdf(RunArgs),
    /// Closed forms against the quadrature and Monte Carlo oracles.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; `-` writes to stdout.
    #[arg(long)]
    out: PathBuf,
    /// Monte Carlo seed, overriding the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "ORDSTAT_JOBS")]
    jobs: Option<usize>,
}

fn execute(computation: Computation, args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = ScenarioConfig::load(&args.config, computation)?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    let jobs = args.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    info!("{} with {} worker(s)", computation.name(), pool.current_num_threads());
    let table = pool.install(|| run(&cfg))?;
    if args.out.as_os_str() == "-" {
        table.write(std::io::stdout().lock())?;
    } else {
        table.write(BufWriter::new(File::create(&args.out)?))?;
    }
    table.status()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let (computation, args) = match &cli.command {
        Command::Capture(a) => (Computation::Capture, a),
        Command::Outage(a) => (Computation::Outage, a),
        Command::Pdf(a) => (Computation::Pdf, a),
        Command::Validate(a) => (Computation::Validate, a),
    };
    match execute(computation, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("ordstat: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
