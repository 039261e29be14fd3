use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fragility::{run, Command, Context};

#[derive(Debug, Parser)]
#[command(name = "fragility", version, about = "Overlap, partial identification and fragility diagnostics for the ATT")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "config/reproduce.toml")]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Use the fetch cache only.
    #[arg(long, global = true)]
    offline: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Download (or copy from the mirror) the LaLonde files into the cache.
    Fetch,
    /// Covariate support maps on the fine and coarse grids.
    Support,
    /// Fit the logistic propensity model.
    Propensity,
    /// ATT on the full, overlap-restricted and trimmed samples, and the matching-design comparison.
    Match,
    /// Curvature sweeps and worst-case bounds.
    Bounds,
    /// Fragility index and bias robustness.
    Fragility,
    /// Stratified bootstrap of the full and trimmed designs.
    Bootstrap,
    /// ATT within propensity-score deciles.
    Deciles,
    /// Selection simulation and the non-identification witness.
    Simulate,
    /// Run every stage and write report.json.
    Reproduce,
    /// Search the grid family for support counts closest to the targets.
    CalibrateGrids,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Fetch => Command::Fetch,
            Cmd::Support => Command::Support,
            Cmd::Propensity => Command::Propensity,
            Cmd::Match => Command::Match,
            Cmd::Bounds => Command::Bounds,
            Cmd::Fragility => Command::Fragility,
            Cmd::Bootstrap => Command::Bootstrap,
            Cmd::Deciles => Command::Deciles,
            Cmd::Simulate => Command::Simulate,
            Cmd::Reproduce => Command::Reproduce,
            Cmd::CalibrateGrids => Command::CalibrateGrids,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = Context::load(&cli.config, cli.seed, cli.offline)
        .and_then(|ctx| run(&ctx, cli.command.into(), &cli.out));
    match result {
        Ok(outcome) => {
            println!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.record()).expect("record serializes"));
            ExitCode::FAILURE
        }
    }
}
