//! Batch front-end: configuration, the `validate-latents`, `simulate`,
//! `sample` and `analyze` commands, and their on-disk formats.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod raster;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

pub use commands::{Invocation, Outcome};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "pulsepp",
    version,
    about = "Empirical sampling of alternate solutions in a generator's latent space"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Built-in preset applied beneath the config file (mri_toy, ct_toy).
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    /// Output directory (default: <output_dir>/<command>).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed of the command, overriding the config.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Concurrent restarts (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare squared latent norms against χ²(k).
    ValidateLatents,
    /// Draw a true object and simulate noisy measurements.
    Simulate,
    /// Run the restarts and keep the accepted alternate solutions.
    Sample {
        /// Directory written by `simulate`.
        #[arg(long, value_name = "DIR")]
        input: Option<PathBuf>,
        /// Acceptance tolerance overriding the configured rule.
        #[arg(long, value_name = "F64")]
        epsilon: Option<f64>,
    },
    /// Uncertainty maps of a solution set.
    Analyze {
        /// Directory written by `sample`.
        #[arg(long, value_name = "DIR")]
        input: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = config::parse_config(cli.common.config.as_deref(), cli.common.preset.as_deref())?;
    let mut inv = Invocation {
        out: cli.common.out,
        workers: cli.common.workers,
        ..Invocation::default()
    };
    match cli.command {
        Command::ValidateLatents => {
            if let Some(s) = cli.common.seed {
                cfg.validate.seed = s;
            }
            commands::cmd_validate_latents(&cfg, &inv)
        }
        Command::Simulate => {
            if let Some(s) = cli.common.seed {
                cfg.seed = s;
            }
            commands::cmd_simulate(&cfg, &inv)
        }
        Command::Sample { input, epsilon } => {
            if let Some(s) = cli.common.seed {
                cfg.sampler.seed = s;
            }
            inv.input = input;
            inv.epsilon = epsilon;
            commands::cmd_sample(&cfg, &inv)
        }
        Command::Analyze { input } => {
            inv.input = input;
            commands::cmd_analyze(&cfg, &inv)
        }
    }
}
