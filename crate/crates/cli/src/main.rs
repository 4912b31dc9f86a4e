use std::path::PathBuf;
use std::process::ExitCode;

use chewing_ssl::objective::Temperature;
use chewing_ssl::train::HeadKind;
use chewing_ssl_cli::commands::{
    cmd_holdout, cmd_postprocess, cmd_preprocess, cmd_pretrain, cmd_synth, cmd_sweep, cmd_train_head,
};
use chewing_ssl_cli::config::{Preset, RunConfig};
use chewing_ssl_cli::{CliError, CliResult};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Self-supervised chewing detection: corpus synthesis, training and evaluation.
#[derive(Debug, Parser)]
#[command(name = "chewssl", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Base settings before the config file and overrides apply.
    #[arg(long, value_enum, default_value = "full", global = true)]
    preset: Preset,
    /// JSON file merged over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set head.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Run on a single worker thread.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Linear,
    Nonlinear,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth,
    /// Resample and high-pass every recording; fix the subject split.
    Preprocess,
    /// Contrastive pretraining of the feature extractor.
    Pretrain {
        /// Projection head to train (requires --tau).
        #[arg(long, value_enum, requires = "tau")]
        kind: Option<Kind>,
        #[arg(long, requires = "kind")]
        tau: Option<f64>,
    },
    /// Train the classifier head of every selected variant.
    TrainHead,
    /// Temperature x variant sweep with leave-one-subject-out folds.
    Sweep,
    /// Evaluate selected variants and the supervised baseline on held-out subjects.
    Holdout,
    /// Turn score files into chew, bout and meal intervals.
    Postprocess {
        /// Score CSVs; defaults to those written by `holdout`.
        scores: Vec<PathBuf>,
    },
    /// Print the resolved configuration.
    ShowConfig,
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.common.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    let cfg = RunConfig::resolve(cli.common.preset, cli.common.config.as_deref(), &cli.common.overrides)?;
    match cli.command {
        Command::Synth => println!("{}", cmd_synth(&cfg)?.display()),
        Command::Preprocess => println!("{}", cmd_preprocess(&cfg)?.display()),
        Command::Pretrain { kind, tau } => {
            let only = match (kind, tau) {
                (Some(k), Some(t)) => {
                    let kind = match k {
                        Kind::Linear => HeadKind::Linear,
                        Kind::Nonlinear => HeadKind::Nonlinear,
                    };
                    Some((kind, Temperature::new(t)?))
                }
                _ => None,
            };
            for dir in cmd_pretrain(&cfg, only)? {
                println!("{}", dir.display());
            }
        }
        Command::TrainHead => {
            for dir in cmd_train_head(&cfg)? {
                println!("{}", dir.display());
            }
        }
        Command::Sweep => {
            cmd_sweep(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.output_dir().join("sweep/report.txt")).unwrap_or_default());
        }
        Command::Holdout => {
            cmd_holdout(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.output_dir().join("holdout/report.txt")).unwrap_or_default());
        }
        Command::Postprocess { scores } => {
            for path in cmd_postprocess(&cfg, &scores)? {
                println!("{}", path.display());
            }
        }
        Command::ShowConfig => println!("{}", serde_json::to_string_pretty(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
