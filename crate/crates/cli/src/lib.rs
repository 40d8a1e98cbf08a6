//! Command-line front end: dataset preparation, training, evaluation, the
//! preset ablation sweep, head-replacement transfer and prediction.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "t4pdm", version, about = "Vibration fault diagnosis with a spectral transformer")]
pub struct Cli {
    /// JSON run configuration; `T4PDM_<SECTION>__<KEY>` variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment recordings and store spectral features.
    Prepare,
    /// Fit the feature pipeline and train the configured preset.
    Train,
    /// Score the trained bundle on the held-out split.
    Evaluate,
    /// Train and score all five presets on one split.
    Ablation,
    /// Replace the head of a trained model and retrain on this run's data.
    Transfer {
        /// Source run directory or bundle file.
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// Write a synthetic dataset (CSV files plus manifest) to `<out>/data`.
    Synth {
        /// 7 (rotor faults, 3 channels) or 4 (bearing faults, 1 channel).
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Classify every window of a CSV recording.
    Predict {
        #[arg(long)]
        input: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Ablation => "ablation",
            Command::Transfer { .. } => "transfer",
            Command::Synth { .. } => "synth",
            Command::Predict { .. } => "predict",
        }
    }
}

/// Builds the resolved configuration for `cli` with overrides from `env`.
pub fn context<I>(cli: &Cli, env: I) -> Result<Context>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut config = RunConfig::load(cli.config.as_deref(), env)?;
    match &cli.command {
        Command::Synth { classes: Some(n) } => config.dataset.synthetic.classes = *n,
        Command::Transfer { source: Some(s) } => config.transfer.source = Some(s.clone()),
        _ => {}
    }
    Ok(Context {
        out: cli.out.clone(),
        config: config.resolve(cli.seed)?,
        force: cli.force,
    })
}

pub fn run_with_env<I>(cli: &Cli, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let ctx = context(cli, env)?;
    match &cli.command {
        Command::Prepare => commands::prepare(&ctx).map(drop),
        Command::Train => commands::train(&ctx).map(drop),
        Command::Evaluate => commands::evaluate(&ctx).map(drop),
        Command::Ablation => commands::ablation(&ctx).map(drop),
        Command::Transfer { .. } => commands::transfer(&ctx).map(drop),
        Command::Synth { .. } => commands::synth(&ctx).map(drop),
        Command::Predict { input } => commands::predict(&ctx, input).map(drop),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    run_with_env(cli, std::env::vars())
}
