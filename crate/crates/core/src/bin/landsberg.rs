//! `landsberg` command-line front end.
//!
//! ```text
//! landsberg <classify|transport|holonomy|validate> [--config FILE] [--seed N]
//!           [--out FILE] [--tol-rank X] [--tol-ode X] [--depth-cap N]
//! ```
//!
//! The JSON report goes to `--out` (CSV side tables next to it) or to stdout.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use landsberg::commands::{self, Command};
use landsberg::config::{ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "landsberg", version, about = "Transport and holonomy experiments on Finsler spaces")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classify the metric from residuals over a base-point grid.
    Classify(Common),
    /// Transport the configured curves and report drift diagnostics.
    Transport(Common),
    /// Filtration ranks and the holonomy comparison at the base points.
    Holonomy(Common),
    /// Run the invariant suite over one metric or the whole catalog.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file. Flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path. CSV tables are written as `<stem>.<table>.csv` beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    tol_rank: Option<f64>,
    #[arg(long)]
    tol_ode: Option<f64>,
    #[arg(long)]
    depth_cap: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Classify(c) => (Command::Classify, c),
        Cmd::Transport(c) => (Command::Transport, c),
        Cmd::Holonomy(c) => (Command::Holonomy, c),
        Cmd::Validate(c) => (Command::Validate, c),
    };
    match execute(command, common) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}

fn execute(command: Command, common: Common) -> landsberg::Result<i32> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    config.apply(&Overrides {
        seed: common.seed,
        out: common.out,
        tol_rank: common.tol_rank,
        tol_ode: common.tol_ode,
        depth_cap: common.depth_cap,
    });
    let outcome = commands::run(command, &config)?;
    if config.out.is_some() {
        outcome.write(&config)?;
    } else {
        print!("{}", outcome.json);
        if !outcome.tables.is_empty() {
            eprintln!("note: CSV tables are only written when --out is given");
        }
    }
    Ok(outcome.exit_code)
}
