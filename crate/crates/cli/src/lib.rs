//! Command line driver: dataset ingestion, configuration and the commands
//! that run the place-recognition pipeline end to end.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "salsa", version, about = "LiDAR place recognition pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory; overrides `run.out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory; overrides `data.dir`.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Model weights; `<out>/model.salsa` by default.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the default configuration to --config (or stdout).
    InitConfig,
    /// Generate a procedural dataset.
    Synth,
    /// Train a model on the dataset.
    Train,
    /// Compute scene and local descriptors for every scan.
    Extract,
    /// Split descriptors into database and queries, optionally whitening.
    BuildDb,
    /// Nearest-neighbour retrieval for every query.
    Query,
    /// Spectral re-ranking of the retrieved candidates.
    Rerank,
    /// Register each query against its best candidate.
    Register,
    /// Recall, MRR and localization reports.
    Evaluate,
}

/// Caps the global worker pool from `SALSA_THREADS`.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("SALSA_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("SALSA_THREADS must be a positive integer, got {v:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult<String> {
    if cli.command == Command::InitConfig {
        return commands::cmd_init_config(cli.config.as_deref());
    }
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.run.seed = s;
    }
    let ctx = Context::new(config, cli.out.clone(), cli.data.clone(), cli.model.clone());
    match cli.command {
        Command::InitConfig => unreachable!("handled above"),
        Command::Synth => commands::cmd_synth(&ctx),
        Command::Train => commands::cmd_train(&ctx),
        Command::Extract => commands::cmd_extract(&ctx),
        Command::BuildDb => commands::cmd_build_db(&ctx),
        Command::Query => commands::cmd_query(&ctx),
        Command::Rerank => commands::cmd_rerank(&ctx),
        Command::Register => commands::cmd_register(&ctx),
        Command::Evaluate => commands::cmd_evaluate(&ctx),
    }
}
