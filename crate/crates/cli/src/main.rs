use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use graphgae_cli::{cmd_eval, cmd_inject, cmd_score, cmd_train, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "graphgae", version, about = "Graph autoencoder anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config (JSON); a train manifest also works.
    #[arg(long)]
    config: PathBuf,
    /// Replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.bin, train_log.csv and manifest.json.
    Train(Common),
    /// Score nodes with a trained model and write scores.csv.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare scores.csv against labels and write metrics.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Plant anomalies and write edges.csv, features.json and labels.csv.
    Inject(Common),
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(common) => {
            let m = cmd_train(&load(&common)?)?;
            println!(
                "trained {} epochs: total loss {:e} -> {:e}",
                m.config.train.epochs, m.initial_loss.total, m.final_loss.total
            );
        }
        Command::Score { common, model } => {
            let s = cmd_score(&load(&common)?, model.as_deref())?;
            println!(
                "scored {} nodes, {} flagged above {:e}",
                s.manifest.num_nodes, s.manifest.num_flagged, s.manifest.threshold
            );
        }
        Command::Eval { common, scores, labels } => {
            let m = cmd_eval(&load(&common)?, scores.as_deref(), labels.as_deref())?;
            println!("auc {} f1 {} precision {} recall {}", m.auc, m.f1, m.precision, m.recall);
        }
        Command::Inject(common) => {
            let r = cmd_inject(&load(&common)?)?;
            println!(
                "planted {} anomalous nodes ({} edges added, {} feature swaps)",
                r.anomalous_nodes, r.edges_added, r.feature_swaps
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
