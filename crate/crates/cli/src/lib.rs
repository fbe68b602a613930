//! Command-line front end: configuration schema, checkpoints, presets and
//! the subcommands that tie the library into reproducible experiments.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod presets;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use mvsvdd::{Error, ErrorKind, Result};

use config::ExperimentConfig;
use presets::Scale;

#[derive(Debug, Parser)]
#[command(name = "mvsvdd", version, about = "Multi-perspective Deep SVDD experiments")]
pub struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: the configured `out_dir`, or `runs/<preset>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Preset scale.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    pub scale: Scale,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the dataset and export it as PNG views with CSV manifests.
    Synth,
    /// Reconstruction pretraining; writes `pretrained.ckpt`.
    Pretrain,
    /// Hypersphere training; writes `model.ckpt`.
    Train {
        /// Start from a `pretrained.ckpt` instead of pretraining again.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Score the test split with a saved model.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Shallow baselines on PCA-reduced stacks.
    Baseline,
    /// Successive-halving hyperparameter search.
    Hpo,
    /// Run a named preset end to end.
    Repro {
        preset: String,
        /// Dataset directory for presets that read files.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// List preset names.
    Presets,
    /// Print the effective configuration.
    ShowConfig,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
        ErrorKind::Internal => 5,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("this command needs --config PATH".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

/// Executes one parsed invocation.
pub fn run(cli: &Cli) -> Result<()> {
    let done = |path: PathBuf| {
        println!("wrote {}", path.display());
        Ok(())
    };
    match &cli.command {
        Command::Presets => {
            presets::preset_names().iter().for_each(|n| println!("{n}"));
            Ok(())
        }
        Command::Repro { preset, data } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(preset));
            done(commands::cmd_repro(preset, cli.scale, data.as_deref(), cli.seed, &out)?)
        }
        cmd => {
            let cfg = load_config(cli)?;
            let out = cfg.out_dir.clone();
            match cmd {
                Command::Synth => done(commands::cmd_synth(&cfg, &out)?),
                Command::Pretrain => done(commands::cmd_pretrain(&cfg, &out)?),
                Command::Train { pretrained } => done(commands::cmd_train(&cfg, pretrained.as_deref(), &out)?),
                Command::Eval { checkpoint } => done(commands::cmd_eval(&cfg, checkpoint, &out)?),
                Command::Baseline => done(commands::cmd_baseline(&cfg, &out)?),
                Command::Hpo => done(commands::cmd_hpo(&cfg, &out)?),
                Command::ShowConfig => {
                    println!("{}", cfg.to_json());
                    Ok(())
                }
                Command::Presets | Command::Repro { .. } => unreachable!("handled above"),
            }
        }
    }
}
