use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tkgc_core::data::{Split, SyntheticPattern};
use tkgc_core::decoder::DecoderKind;
use tkgc_core::encoder::Composition;
use tkgc_core::eval::Pooling;
use tkgc_core::model::Ablation;
use tkgc_core::train::Precision;

#[derive(Debug, Parser)]
#[command(name = "tkgc", version, about = "Temporal knowledge graph completion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print dataset statistics as JSON.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// Also write the JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset directory.
    Synth {
        #[arg(long, value_parser = parse_pattern)]
        pattern: SyntheticPattern,
        #[arg(long, default_value_t = 20)]
        entities: usize,
        #[arg(long, default_value_t = 4)]
        relations: usize,
        #[arg(long, default_value_t = 30)]
        timestamps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the pooled scores of several checkpoints.
    Ensemble {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, default_value = "avg", value_parser = parse_pooling)]
        pooling: Pooling,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Pool raw scores instead of softmax-normalized ones.
        #[arg(long)]
        raw_scores: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path. With several seeds, `.seed<N>` is appended.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with TrainConfig keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub history_length: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub layers: Option<u64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub patience: Option<u64>,
    #[arg(long, value_parser = parse_decoder)]
    pub decoder: Option<DecoderKind>,
    #[arg(long, value_parser = parse_composition)]
    pub composition: Option<Composition>,
    #[arg(long = "ablate", value_parser = parse_ablation)]
    pub ablations: Vec<Ablation>,
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// Pool query relations over both phases (leaks answers; for study only).
    #[arg(long)]
    pub single_phase: bool,
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s.parse::<Split>() {
        Ok(Split::Train) => Err("evaluation split must be valid or test".into()),
        other => other.map_err(|e| e.to_string()),
    }
}

fn parse_pattern(s: &str) -> Result<SyntheticPattern, String> {
    s.parse().map_err(|e: tkgc_core::Error| e.to_string())
}

fn parse_pooling(s: &str) -> Result<Pooling, String> {
    s.parse().map_err(|e: tkgc_core::Error| e.to_string())
}

fn parse_decoder(s: &str) -> Result<DecoderKind, String> {
    s.parse().map_err(|e: tkgc_core::Error| e.to_string())
}

fn parse_composition(s: &str) -> Result<Composition, String> {
    match s {
        "sum" => Ok(Composition::Sum),
        "mult" => Ok(Composition::Mult),
        _ => Err(format!("unknown composition {s:?} (sum, mult)")),
    }
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: tkgc_core::Error| e.to_string())
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: tkgc_core::Error| e.to_string())
}
