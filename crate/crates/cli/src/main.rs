//! `pwfkit run|grid|width|verify --config <path> [--out-dir <dir>] [--seed <u64>]`
//!
//! Exit codes: 0 success, 1 a verified lemma failed, 2 config error,
//! 3 unsupported feature, 4 IO error.

mod commands;
mod config;
mod error;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::Mode;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "pwfkit",
    version,
    about = "Projected Wirtinger Flow experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One recovery: trace.csv and summary.json.
    Run(Common),
    /// Success rates over an (s, m) grid: grid.csv.
    Grid(Common),
    /// Statistical dimension of a cone: width.json.
    Width(Common),
    /// Lemma checks: verify.json.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out_dir` (default: current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides `seed` (default: 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(mode: Mode, args: &Common) -> CliResult<bool> {
    let cfg = config::load(&args.config)?;
    if let Some(declared) = cfg.mode {
        if declared != mode {
            return Err(CliError::Config(format!(
                "config declares mode {declared:?}, command is {mode:?}"
            )));
        }
    }
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let out = args
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = args.threads.or(cfg.threads) {
        if threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        pool = pool.num_threads(threads);
    }
    let pool = pool.build().map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| match mode {
        Mode::Run => commands::run(&cfg, seed, &out).map(|_| true),
        Mode::Grid => commands::grid(&cfg, seed, &out).map(|_| true),
        Mode::Width => commands::width(&cfg, seed, &out).map(|_| true),
        Mode::Verify => verify::verify(&cfg, seed, &out),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Run(a) => (Mode::Run, a),
        Command::Grid(a) => (Mode::Grid, a),
        Command::Width(a) => (Mode::Width, a),
        Command::Verify(a) => (Mode::Verify, a),
    };
    match execute(mode, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more lemma checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("pwfkit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
