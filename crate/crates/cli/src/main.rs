//! Experiment runner: one TOML file per experiment, outputs plus a JSON
//! manifest in a directory.

mod config;
mod error;
mod output;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use twolevel::Exec;

use config::{ExperimentConfig, Kind};
use error::{CliError, Result};
use output::Outputs;

#[derive(Parser)]
#[command(name = "twolevel", version, about = "Two-level selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the file's `seed`.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads for replicate and grid-point loops (1 = sequential).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run any experiment kind.
    Run(RunArgs),
    /// Run a `scan` experiment and write its aggregated table.
    Sweep(RunArgs),
    /// Parse and check an experiment file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> Result<PathBuf> {
    if let Some(o) = &args.out {
        return Ok(o.clone());
    }
    match &cfg.out {
        // relative paths in the file are relative to the file
        Some(o) => Ok(args.config.parent().unwrap_or(Path::new(".")).join(o)),
        None => Err(CliError::Validation("out: no output directory (set `out` or pass --out)".into())),
    }
}

fn exec_for(threads: Option<usize>) -> Result<Exec> {
    match threads {
        Some(0) => Err(CliError::Validation("--threads: must be >= 1".into())),
        Some(1) => Ok(Exec::Sequential),
        Some(t) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
            #[cfg(not(feature = "parallel"))]
            let _ = t;
            Ok(Exec::Parallel)
        }
        None => Ok(Exec::Parallel),
    }
}

fn run(args: &RunArgs, require_scan: bool) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if require_scan && cfg.kind != Kind::Scan {
        return Err(CliError::Validation(format!("kind: sweep needs kind = \"scan\", got {:?}", cfg.kind)));
    }
    let dir = out_dir(args, &cfg)?;
    if let Some(seed) = args.seed_override {
        cfg.seed = seed;
    }
    // what gets archived is independent of where it was written
    cfg.out = None;
    let exec = exec_for(args.threads)?;
    let mut out = Outputs::create(&dir)?;
    out.text("config.toml", "toml", &cfg.to_toml())?;
    let lines = run::execute(&cfg, &mut out, exec)?;
    let manifest = out.finish(&cfg)?;
    for l in lines {
        println!("{l}");
    }
    eprintln!("manifest: {}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args, false),
        Command::Sweep(args) => run(args, true),
        Command::Validate { config } => ExperimentConfig::load(config).map(|cfg| {
            println!("ok: {} is a valid {:?} experiment", config.display(), cfg.kind);
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
