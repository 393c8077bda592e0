//! `afrelay` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 1 anything else (I/O).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use afrelay::msr::EigenSolver;
use afrelay::ConstraintKind;
use clap::{Parser, Subcommand};

use config::{FeedbackChoice, Overrides};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<afrelay::Error> for CliError {
    fn from(e: afrelay::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "afrelay", version, about = "Relay power allocation designs, Monte-Carlo sweeps and complexity counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration (defaults are used for anything omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the Monte-Carlo sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory receiving every output file.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Alternating design iterations (config default 2).
    #[arg(long, global = true)]
    iterations: Option<usize>,

    /// MMSE power constraint.
    #[arg(long, global = true)]
    constraint: Option<ConstraintKind>,

    /// MSR eigen-solver.
    #[arg(long, global = true)]
    solver: Option<EigenSolver>,

    /// Gain feedback model.
    #[arg(long, global = true, value_enum)]
    feedback: Option<FeedbackChoice>,

    /// BSC crossover probability (implies `--feedback bsc`).
    #[arg(long, global = true)]
    pe: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Design gains and receiver for one seeded channel draw.
    Design,
    /// BER sweep over the SNR grid.
    Ber,
    /// Sum-rate sweep over the SNR grid.
    Sumrate,
    /// Operation counts per design iteration versus relay-group size.
    Complexity,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Design => "design",
            Command::Ber => "ber",
            Command::Sumrate => "sumrate",
            Command::Complexity => "complexity",
        }
    }
}

fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let mut cfg = config::load(cli.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        iterations: cli.iterations,
        constraint: cli.constraint,
        solver: cli.solver,
        feedback: cli.feedback,
        pe: cli.pe,
    })?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let mut out = output::OutDir::create(&cli.out_dir)?;
    match cli.command {
        Command::Design => commands::design(&cfg, &mut out)?,
        Command::Ber => commands::ber(&cfg, &mut out)?,
        Command::Sumrate => commands::sumrate(&cfg, &mut out)?,
        Command::Complexity => commands::complexity(&cfg, &mut out)?,
    }
    out.finish(cli.command.name(), &cfg, start.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(manifest) => {
            log::info!("manifest: {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("afrelay: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
