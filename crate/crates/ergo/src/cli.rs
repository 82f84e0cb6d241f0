//! Argument parsing and dispatch for the `ergo` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ergo_core::Real;
use serde::Serialize;

use crate::commands::{self, AttentionQuery, Context};
use crate::config::RawConfig;
use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "ergo", version, about = "Document-level event causality identification")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Experiment file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving every artifact.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for folds and grid points.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory of document JSON files.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Corpus statistics.
    Stats,
    /// Relational graph of one document.
    MakeGraph {
        #[arg(long)]
        doc: String,
    },
    /// Train one model and save the best checkpoint.
    Train {
        /// Hold this fold out.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Cross-validation with pooled metrics.
    Cv,
    /// Score a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Pair probabilities from a checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        doc: Option<String>,
    },
    /// Probability histogram of a predictions file.
    Hist {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Attention weights of one node.
    DumpAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        doc: String,
        #[arg(long)]
        node: usize,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        head: usize,
    },
    /// Parameter counts of RGT, GAT and GCN stacks.
    ParamCount {
        #[arg(long)]
        layers: usize,
        #[arg(long)]
        heads: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        dk: Option<usize>,
    },
    /// Hyperparameter grid scored on held-out documents.
    Gridsearch,
}

/// Config file, then `--set`, then the dedicated flags.
pub fn raw_config(g: &Global) -> Result<RawConfig, Error> {
    let mut raw = match &g.config {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::defaults(),
    };
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        raw.set(k.trim(), v.trim())?;
    }
    let flags = [
        ("seed", g.seed.map(|s| s.to_string())),
        ("output_dir", g.out.as_ref().map(|p| p.display().to_string())),
        ("jobs", g.jobs.map(|j| j.to_string())),
        ("corpus", g.corpus.as_ref().map(|p| p.display().to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            raw.set(k, &v)?;
        }
    }
    Ok(raw)
}

fn json<S: Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("output serializes")
}

/// Runs a parsed command line in profile `T` and returns what goes to stdout.
pub fn run<T: Real>(cli: &Cli) -> Result<String, Error> {
    let ctx = Context::new(raw_config(&cli.global)?)?;
    Ok(match &cli.command {
        Command::Stats => json(&commands::stats(&ctx)?),
        Command::MakeGraph { doc } => json(&commands::make_graph(&ctx, doc)?),
        Command::Train { fold } => json(&commands::train_command::<T>(&ctx, *fold)?),
        Command::Cv => json(&commands::cv::<T>(&ctx)?.pooled),
        Command::Eval { checkpoint, fold } => json(&commands::eval::<T>(&ctx, checkpoint, *fold)?),
        Command::Predict { checkpoint, doc } => {
            let recs = commands::predict::<T>(&ctx, checkpoint, doc.as_deref())?;
            format!(
                "{} predictions written to {}",
                recs.len(),
                ctx.out("predictions.jsonl").display()
            )
        }
        Command::Hist { predictions } => ergo_core::evaluation::histogram_csv(&commands::hist(&ctx, predictions)?),
        Command::DumpAttention {
            checkpoint,
            doc,
            node,
            layer,
            head,
        } => {
            let q = AttentionQuery {
                doc,
                node: *node,
                layer: *layer,
                head: *head,
            };
            json(&commands::dump_attention_command::<T>(&ctx, checkpoint, q)?)
        }
        Command::ParamCount { layers, heads, dim, dk } => {
            commands::param_count_command(&ctx, *layers, *heads, *dim, *dk)?.render()
        }
        Command::Gridsearch => json(&commands::gridsearch::<T>(&ctx)?),
    })
}

/// Runs in the profile named by `ERGO_PROFILE` (`f32` unless `f64`).
pub fn run_profile(cli: &Cli, profile: Option<&str>) -> Result<String, Error> {
    match profile.unwrap_or("f32") {
        "f32" => run::<f32>(cli),
        "f64" => run::<f64>(cli),
        other => Err(Error::Usage(format!("ERGO_PROFILE must be f32 or f64, got `{other}`"))),
    }
}
