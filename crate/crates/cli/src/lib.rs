//! Batch command surface for the sensing pipeline.
//!
//! Stages run in order data -> beams -> estimate -> train -> sample ->
//! evaluate. Each reads the previous stage's files and writes its outputs
//! plus a `run.manifest`.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use emsense::config::SystemConfig;

pub mod manifest;
pub mod stages;

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "emsense", version, about = "EM property sensing pipeline: data, beams, estimation, diffusion, evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// System configuration in key = value form; defaults to the desk-scale preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every random draw of the stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (1 gives bitwise-reproducible outputs).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset of primitive targets with their sensing channels.
    GenData(GenDataArgs),
    /// Solve the rate-constrained CRB beamforming problem for drawn UE channels.
    DesignBeams(DesignArgs),
    /// Simulate echoes with a designed transmit block and form LS channel estimates.
    Estimate(EstimateArgs),
    /// Train the channel-transfer and noise networks.
    Train(TrainArgs),
    /// Sample point clouds from a trained model.
    Sample(SampleArgs),
    /// Score sampled clouds against ground truth (mean Chamfer distance in dB).
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 64)]
    pub records: usize,
    /// Surface points per target cloud.
    #[arg(long, default_value_t = 128)]
    pub points: usize,
    /// Comma-separated subset of sphere, box, ellipsoid, union.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    /// Place every target at the reference location.
    #[arg(long)]
    pub at_reference: bool,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Total transmit power budget in dBm (default: from the config).
    #[arg(long)]
    pub power_dbm: Option<f64>,
    /// Minimum per-UE rate in bit/s/Hz (default: from the config).
    #[arg(long)]
    pub min_rate: Option<f64>,
    /// Number of communication users (default: from the config).
    #[arg(long)]
    pub ue_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Dataset directory from gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Design directory from design-beams.
    #[arg(long)]
    pub design: PathBuf,
    /// Drop the receiver noise (the estimate then equals the channel).
    #[arg(long)]
    pub noiseless: bool,
    /// Also run this many Monte-Carlo trials on the first record and compare with the CRB.
    #[arg(long, default_value_t = 0)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Estimates directory; the transfer network then learns from estimated channels.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    /// Diffusion steps T of the linear schedule.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 200)]
    pub noise_epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub transfer_epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    /// Learning rate of the transfer phase.
    #[arg(long, default_value_t = 1e-3)]
    pub transfer_learning_rate: f64,
    /// Network sizes.
    #[arg(long, value_enum, default_value_t = ArchChoice::Full)]
    pub arch: ArchChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchChoice {
    Full,
    /// Small networks for smoke runs.
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
    Validation,
    All,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Checkpoint written by train.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Condition on these channel estimates instead of the true channels.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// Points per sampled cloud.
    #[arg(long, default_value_t = 128)]
    pub points: usize,
    /// Diffusion steps; must match training.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Samples directory from sample.
    #[arg(long)]
    pub samples: PathBuf,
    /// Compare positions only instead of the full 5D points.
    #[arg(long)]
    pub position_only: bool,
}

/// Loads the configuration named by `--config`, or the desk-scale preset.
pub fn load_config(g: &Global) -> Result<SystemConfig> {
    let cfg = match &g.config {
        Some(p) => SystemConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => SystemConfig::desk_scale(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg = load_config(&cli.global)?;
    std::fs::create_dir_all(&cli.global.out).with_context(|| format!("creating {}", cli.global.out.display()))?;
    match &cli.command {
        Command::GenData(a) => stages::gen_data(&cli.global, &cfg, a),
        Command::DesignBeams(a) => stages::design_beams(&cli.global, &cfg, a),
        Command::Estimate(a) => stages::estimate(&cli.global, &cfg, a),
        Command::Train(a) => stages::train(&cli.global, &cfg, a),
        Command::Sample(a) => stages::sample(&cli.global, &cfg, a),
        Command::Evaluate(a) => stages::evaluate(&cli.global, &cfg, a),
    }
}

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use emsense::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Infeasible(_) | E::ZeroGain(_) => EXIT_INFEASIBLE,
                E::NonConvergence { .. }
                | E::NonFiniteLoss(_)
                | E::SingularDesign(_)
                | E::Singularity(_)
                | E::NegativeDenominator(_) => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            };
        }
        if cause.downcast_ref::<stages::Infeasible>().is_some() {
            return EXIT_INFEASIBLE;
        }
        if cause.downcast_ref::<stages::Numerical>().is_some() {
            return EXIT_NUMERICAL;
        }
    }
    EXIT_USAGE
}
