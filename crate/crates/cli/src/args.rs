use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use doccheck_core::LanguageId;

#[derive(Debug, Parser)]
#[command(name = "doccheck", version, about = "Find and fix docstrings that disagree with their code")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Jsonl,
    Pretty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputKind {
    /// Extracted function records.
    Records,
    /// Before/after edit records.
    Jit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Evaluator {
    Model,
    Tfidf,
    Svm,
}

#[derive(Debug, Args)]
pub struct CheckpointArg {
    /// Model checkpoint.
    #[arg(long, env = "DOCCHECK_CHECKPOINT")]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract functions and docstrings as records.
    Extract {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Language of every input; inferred from extensions when omitted.
        #[arg(long, value_parser = parse_language)]
        lang: Option<LanguageId>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
    },
    /// Turn records into labeled pairs and split them into train/valid/test.
    BuildDataset {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "records")]
        kind: InputKind,
        /// Output directory for train.jsonl, valid.jsonl and test.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Train, valid and test fractions.
        #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
        split: (f64, f64, f64),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Train a tokenizer and a model from scratch on labeled pairs.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Destination checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Training settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model architecture (TOML); defaults to the small CPU model.
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long, default_value_t = doccheck_core::tokenize::DEFAULT_VOCAB_SIZE)]
        vocab_size: usize,
        /// Overrides the seed of both settings files.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-step losses as JSONL.
        #[arg(long)]
        loss_log: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Fine-tune a checkpoint for inconsistency classification.
    Finetune {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        loss_log: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Check every function in the given files or directories.
    Check {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, value_parser = parse_language)]
        lang: Option<LanguageId>,
        #[command(flatten)]
        checkpoint: CheckpointArg,
        /// Probability above which a pair is inconsistent.
        #[arg(long, value_parser = parse_threshold)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Score a checkpoint or a lexical baseline on labeled pairs.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "model")]
        evaluator: Evaluator,
        /// Required for the model evaluator.
        #[arg(long, env = "DOCCHECK_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        /// Training pairs; required for the baselines.
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, value_parser = parse_threshold)]
        threshold: Option<f64>,
        /// Skip docstring generation and BLEU.
        #[arg(long)]
        no_generation: bool,
        /// Per-example scores as JSONL.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Serve the JSON API.
    Serve {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        #[arg(long, env = "DOCCHECK_HOST", default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, env = "DOCCHECK_PORT", default_value_t = 8080)]
        port: u16,
        /// Origin allowed by CORS; any origin when omitted.
        #[arg(long)]
        allowed_origin: Option<String>,
        #[arg(long, value_parser = parse_threshold)]
        threshold: Option<f64>,
    },
}

fn parse_language(s: &str) -> Result<LanguageId, String> {
    s.parse().map_err(|e: doccheck_core::language::UnknownLanguage| e.to_string())
}

fn parse_threshold(s: &str) -> Result<f64, String> {
    let t: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if t > 0.0 && t < 1.0 {
        Ok(t)
    } else {
        Err(format!("threshold {t} is outside (0, 1)"))
    }
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64), String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three comma-separated fractions".into()),
    }
}
