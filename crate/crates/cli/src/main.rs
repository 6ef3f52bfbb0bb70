//! `untangle`: generate worlds, train and score models, run sweeps and
//! analyses, and the rotated-latents demo.
//!
//! Every subcommand takes an optional JSON config, `--set key=value`
//! overrides, `--seed` and a required `--out` directory. All outputs,
//! including `run_manifest.json`, go under `--out`. Exit status is 0 on
//! success, 1 for invalid input or configuration and 2 for failures while
//! running; errors are printed as a single `E_CODE: message` line.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use error::{classify, one_line};
use manifest::Ctx;

pub const VERSION: &str = env!("UNTANGLE_VERSION");

#[derive(Debug, Parser)]
#[command(name = "untangle", version = VERSION, about = "Disentanglement training, metrics and model-selection studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; keys not in the schema are rejected.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. `train.adam.lr=0.001`.
    /// The value is parsed as JSON, or taken as a string. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", alias = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a world's factor grid (or a sample of it) to tensor files.
    Generate {
        #[command(flatten)]
        common: Common,
        /// dsprites-lite or color-dsprites-lite.
        #[arg(long)]
        world: Option<String>,
        /// Image side: 16 or 64.
        #[arg(long)]
        size: Option<usize>,
        /// Sample this many rows instead of exporting the full grid.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train one model and write its checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: Option<String>,
        #[arg(long)]
        size: Option<usize>,
        /// beta_vae, annealed_vae, factor_vae, beta_tcvae, dip_vae_i or dip_vae_ii.
        #[arg(long)]
        method: Option<String>,
        /// Value of the method's regularization-strength hyperparameter.
        #[arg(long)]
        strength: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Encode a generated dataset with a checkpoint's encoder means.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        ckpt: PathBuf,
        /// Directory written by `generate`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Score a checkpoint, or pre-encoded codes, with the disentanglement metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE", conflicts_with_all = ["reps", "factors"])]
        ckpt: Option<PathBuf>,
        /// World manifest (`world.json` from `generate`).
        #[arg(long, value_name = "FILE")]
        world: Option<PathBuf>,
        /// Code tensor, f32 [N, d].
        #[arg(long, value_name = "FILE", requires = "factors")]
        reps: Option<PathBuf>,
        /// Factor tensor, i64 [N, k].
        #[arg(long, value_name = "FILE", requires = "reps")]
        factors: Option<PathBuf>,
        /// `all` or a comma-separated list of score names.
        #[arg(long)]
        metrics: Option<String>,
    },
    /// Run a sweep and append its scores to `<out>/scores.csv`.
    Study {
        #[command(flatten)]
        common: Common,
        /// Worker threads; overrides UNTANGLE_WORKERS and the config.
        #[arg(long)]
        workers: Option<usize>,
        /// Replace runs already in the store.
        #[arg(long)]
        force: bool,
        /// Keep every trained checkpoint under `<out>/checkpoints`.
        #[arg(long)]
        save_checkpoints: bool,
    },
    /// ANOVA, rank correlations, transfer and plots for a score store.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        store: PathBuf,
        /// Monte-Carlo trials for the transfer comparison.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Twin worlds with rotated latents and identical observations.
    Impossibility {
        #[command(flatten)]
        common: Common,
        /// Latent dimension.
        #[arg(long)]
        d: Option<usize>,
        /// Samples for the MIG and moment checks.
        #[arg(long)]
        n: Option<usize>,
        /// Use this angle (radians) for every Givens rotation instead of random ones.
        #[arg(long, allow_hyphen_values = true)]
        angle: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Train { .. } => "train",
            Command::Encode { .. } => "encode",
            Command::Evaluate { .. } => "evaluate",
            Command::Study { .. } => "study",
            Command::Analyze { .. } => "analyze",
            Command::Impossibility { .. } => "impossibility",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Generate { common, .. }
            | Command::Train { common, .. }
            | Command::Encode { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Study { common, .. }
            | Command::Analyze { common, .. }
            | Command::Impossibility { common, .. } => common,
        }
    }
}

fn dispatch(command: &Command, ctx: &mut Ctx) -> anyhow::Result<()> {
    use commands::*;
    match command {
        Command::Generate { common, world, size, samples } => generate(ctx, common, world, *size, *samples),
        Command::Train { common, world, size, method, strength, steps } => {
            train(ctx, common, world, *size, method, *strength, *steps)
        }
        Command::Encode { common, ckpt, data } => encode(ctx, common, ckpt, data),
        Command::Evaluate { common, ckpt, world, reps, factors, metrics } => {
            evaluate(ctx, common, ckpt.as_deref(), world.as_deref(), reps.as_deref().zip(factors.as_deref()), metrics)
        }
        Command::Study { common, workers, force, save_checkpoints } => {
            study(ctx, common, *workers, *force, *save_checkpoints)
        }
        Command::Analyze { common, store, trials } => analyze(ctx, common, store, *trials),
        Command::Impossibility { common, d, n, angle } => impossibility(ctx, common, *d, *n, *angle),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("E_USAGE: {first}");
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let command = &cli.command;
    let mut ctx = Ctx::new(command.name(), command.common().out.clone());
    let result = ctx.start().and_then(|()| dispatch(command, &mut ctx));
    match result {
        Ok(()) => match ctx.finish(None) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("E_IO: {}", one_line(&e));
                ExitCode::from(2)
            }
        },
        Err(e) => {
            let code = classify(&e);
            let message = one_line(&e);
            eprintln!("{}: {message}", code.as_str());
            let _ = ctx.finish(Some((code, message)));
            ExitCode::from(code.exit_status())
        }
    }
}
