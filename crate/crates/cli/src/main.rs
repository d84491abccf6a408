//! `lsrc` — batch driver for local-state reservoir forecasting of the
//! Barkley model: simulate, train/predict, ensembles, sweeps, readout
//! contribution studies, and heatmap rendering.

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use lsrc_cli::commands;
use lsrc_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "lsrc", version, about, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file; flags below override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration preset
    #[arg(long, global = true, value_parser = ["paper", "desk"])]
    preset: Option<String>,
    /// Base RNG seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-point training/prediction
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for all artifacts
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Hybrid wiring
    #[arg(long, global = true, value_parser = ["reservoir", "ih", "oh", "fh"])]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the ground-truth trajectory and store it
    Simulate(Common),
    /// Train once and run one closed-loop prediction
    Run(Common),
    /// Sectioned ensemble over the configured (mode, r_dim, e) grid
    Ensemble(Common),
    /// Hyperparameter sweep (config key sweep_parameter)
    Sweep(Common),
    /// Readout contribution study over the model-error grid
    Wout(Common),
    /// Render stored trajectory states as PGM heatmaps
    Render(Common),
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (Some(path), Some(_)) => {
            // an explicit file wins over the preset
            RunConfig::load(path)?
        }
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.sim_init_seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.to_string_lossy().into_owned();
    }
    if let Some(mode) = &common.mode {
        cfg.mode = mode.clone();
    }
    cfg.validate()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .ok(); // already-initialized pool (tests) keeps its size
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(c) => {
            commands::cmd_simulate(&resolve(c)?)?;
        }
        Command::Run(c) => commands::cmd_run(&resolve(c)?)?,
        Command::Ensemble(c) => commands::cmd_ensemble(&resolve(c)?)?,
        Command::Sweep(c) => commands::cmd_sweep(&resolve(c)?)?,
        Command::Wout(c) => commands::cmd_wout(&resolve(c)?)?,
        Command::Render(c) => commands::cmd_render(&resolve(c)?)?,
    }
    Ok(())
}
