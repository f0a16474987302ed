//! Operator surface for the toolkit: dataset preparation, training,
//! evaluation, single-query prediction, and the ablation harness. Driven by
//! a TOML config file plus flags; every run writes a manifest next to its
//! outputs. All randomness is seeded; there is no wall-clock seeding.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{cmd_ablate, cmd_eval, cmd_predict, cmd_prepare, cmd_train};
use config::{CommonArgs, RunConfig};

#[derive(Parser)]
#[command(
    name = "contextkgc",
    version,
    about = "Context-aware knowledge graph completion (tail prediction)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset, build the context cache, and report graph stats.
    Prepare {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a model and write a checkpoint, training log, and manifest.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the configured learning rate (logged in the manifest).
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Override the configured epoch cap.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the configured batch size.
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Evaluate a checkpoint on the test split (MRR, Hits@k).
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Protocol selection: true (filtered), false (raw), or both.
        #[arg(long)]
        filtered: Option<String>,
        /// Context mode override: full, head_only, or relation_only.
        #[arg(long)]
        context_mode: Option<String>,
    },
    /// Rank tail candidates for a single (head, relation) query.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        head: String,
        #[arg(long)]
        relation: String,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Train and evaluate full, head-only, and relation-only models with
    /// identical seeds; emit a comparison table.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Prepare { common } => cmd_prepare(RunConfig::load(&common)?),
        Command::Train {
            common,
            learning_rate,
            epochs,
            batch_size,
        } => {
            let mut cfg = RunConfig::load(&common)?;
            cfg.apply_train_overrides(learning_rate, epochs, batch_size);
            cmd_train(cfg)
        }
        Command::Eval {
            common,
            checkpoint,
            filtered,
            context_mode,
        } => {
            let mut cfg = RunConfig::load(&common)?;
            if let Some(mode) = context_mode {
                cfg.eval.context_mode = mode.parse()?;
                cfg.overrides.push(format!("--context-mode {}", cfg.eval.context_mode));
            }
            let protocols = filtered.as_deref().map(str::parse).transpose()?;
            cmd_eval(cfg, checkpoint, protocols)
        }
        Command::Predict {
            common,
            checkpoint,
            head,
            relation,
            top_k,
        } => cmd_predict(RunConfig::load(&common)?, checkpoint, head, relation, top_k),
        Command::Ablate { common } => cmd_ablate(RunConfig::load(&common)?),
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
