use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use scorefilt_cli::commands;
use scorefilt_cli::config::{Command, RunConfig};
use scorefilt_cli::Failure;

/// Implicit and explicit score-driven filtering, certificates, bounds and simulation studies.
#[derive(Parser, Debug)]
#[command(name = "scorefilt", version)]
struct Cli {
    /// Subcommand; falls back to `command` in the config file.
    command: Option<Command>,
    /// Study name for `experiment`.
    study: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated list of `csv`, `json`.
    #[arg(long, value_delimiter = ',')]
    emit: Option<Vec<String>>,
    /// Use the full replication counts instead of the desk-scale defaults.
    #[arg(long)]
    paper_scale: bool,
    /// Data file; relative paths resolve against SCOREFILT_DATA_DIR when set.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.reps.is_some() {
        cfg.reps = cli.reps;
    }
    if cli.out.is_some() {
        cfg.out = cli.out;
    }
    if cli.emit.is_some() {
        cfg.emit = cli.emit;
    }
    if cli.paper_scale {
        cfg.paper_scale = Some(true);
    }
    if cli.data.is_some() {
        cfg.data = cli.data;
    }
    if cli.study.is_some() {
        cfg.study = cli.study;
    }
    let cmd = cli
        .command
        .or(cfg.command)
        .ok_or_else(|| Failure::Config("no subcommand given on the command line or in the config".into()))?;
    for p in commands::run(cmd, &cfg)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scorefilt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
