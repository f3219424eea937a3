//! Command-line driver for the guided-diffusion laboratory.

mod commands;
mod config;
mod svg;

use clap::{Args, Parser, Subcommand};
use commands::{CliError, CliResult};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fwdguide",
    about = "Training-free guided diffusion on toy 2D data with forward-gradient and backprop guidance",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Config file (key = value sections); defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seed override: the training seed for `train`, the sampling seed
    /// otherwise.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the denoiser and write the checkpoint plus a loss log.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run one guided sampling pass; writes samples, trajectory, and an SVG
    /// scatter.
    Guide {
        #[command(flatten)]
        common: Common,
        /// unguided | tweedie | direct | titan
        #[arg(long)]
        strategy: Option<String>,
        /// random | score | sampled
        #[arg(long)]
        guess: Option<String>,
    },
    /// Run every strategy variant and write one metrics row each.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Measure guidance memory at the given unroll depths.
    Membench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated unroll depths.
        #[arg(long, default_value = "5,10,20")]
        depths: String,
    },
}

fn resolve(common: &Common, is_train: bool) -> CliResult<config::RunConfig> {
    let mut cfg = commands::load_config(common.config.as_deref())?;
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.display().to_string();
    }
    if let Some(seed) = common.seed {
        if is_train {
            cfg.train_seed = seed;
        } else {
            cfg.sample_seed = seed;
        }
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.cmd {
        Cmd::Train { common } => {
            let cfg = resolve(&common, true)?;
            commands::cmd_train(&cfg)
        }
        Cmd::Guide { common, strategy, guess } => {
            let mut cfg = resolve(&common, false)?;
            if let Some(s) = strategy {
                cfg.strategy = config::parse_strategy(&s).map_err(CliError::Usage)?;
            }
            if let Some(g) = guess {
                cfg.guess = config::parse_guess(&g).map_err(CliError::Usage)?;
            }
            commands::cmd_guide(&cfg)
        }
        Cmd::Compare { common } => {
            let cfg = resolve(&common, false)?;
            commands::cmd_compare(&cfg)
        }
        Cmd::Membench { common, depths } => {
            let cfg = resolve(&common, false)?;
            let depths = commands::parse_depths(&depths)?;
            commands::cmd_membench(&cfg, &depths)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
