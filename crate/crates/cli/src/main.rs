//! `texbank`: batch driver for the texture pipeline.

mod config;
mod provenance;
mod stages;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{EncoderName, PipelineConfig};
use stages::Env;

#[derive(Debug, Parser)]
#[command(
    name = "texbank",
    version,
    about = "Texture description pipeline: descriptors, encoders, classifiers"
)]
struct Cli {
    /// TOML pipeline configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for per-image stages (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Workspace directory that receives artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// More log output; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a seeded three-class synthetic texture set with a manifest.
    Synth(SynthArgs),
    /// Extract descriptor fields for every image of a manifest.
    Extract(ExtractArgs),
    /// Fit the PCA / codebook / GMM vocabulary on training descriptors.
    FitVocab(VocabArgs),
    /// Pool each image's descriptors into one vector.
    Encode(EncodeArgs),
    /// Train one-vs-all classifiers on the training split.
    Train(TrainArgs),
    /// Score a split and write a predictions table.
    Predict(PredictArgs),
    /// Report accuracy and mAP of a predictions table.
    Evaluate(EvaluateArgs),
    /// Label an image by pasting classified region proposals.
    Segment(SegmentArgs),
    /// Simulate attribute annotation under a query budget.
    Annosim(AnnosimArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    per_class: usize,
    #[arg(long, default_value_t = 80)]
    size: usize,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Tab-separated dataset manifest.
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
}

#[derive(Debug, Args)]
struct EncoderOverrides {
    #[arg(long, value_enum)]
    encoder: Option<EncoderName>,
    /// Vocabulary size.
    #[arg(long = "K", value_name = "K")]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct VocabArgs {
    /// Descriptor directory (default: OUT/fields).
    #[arg(long, value_name = "DIR")]
    fields: Option<PathBuf>,
    #[command(flatten)]
    overrides: EncoderOverrides,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long, value_name = "DIR")]
    fields: Option<PathBuf>,
    /// Vocabulary model (default: OUT/vocab/vocab.txmd, fitted if missing).
    #[arg(long, value_name = "PATH")]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    overrides: EncoderOverrides,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Encoded vectors (default: OUT/encoded).
    #[arg(long, value_name = "DIR")]
    encoded: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long, value_name = "DIR")]
    encoded: Option<PathBuf>,
    /// Classifier model (default: OUT/model/classifier.txmd).
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Split to score: train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Predictions table (default: OUT/predictions.csv).
    #[arg(long, value_name = "PATH")]
    predictions: Option<PathBuf>,
    /// Evaluate even if the predictions came from a different configuration.
    #[arg(long)]
    allow_lineage_mismatch: bool,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long, value_name = "PATH")]
    image: PathBuf,
    /// Run-length encoded proposal masks.
    #[arg(long, value_name = "PATH")]
    proposals: PathBuf,
    #[arg(long, value_name = "PATH")]
    vocab: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    model: Option<PathBuf>,
    /// 16-bit PGM label map to score the result against.
    #[arg(long, value_name = "PATH")]
    ground_truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnnosimArgs {
    /// CSV with columns image,key,<attribute>... holding 0/1 cells.
    #[arg(long, value_name = "PATH")]
    ground_truth: PathBuf,
    /// CSV with columns image,<attribute>... holding classifier scores.
    #[arg(long, value_name = "PATH")]
    scores: Option<PathBuf>,
    /// Budgets to report (default: every budget).
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
}

/// An error caused by the input rather than by the program.
#[derive(Debug)]
pub struct UserError(pub String);

impl std::fmt::Display for UserError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn is_user_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<UserError>()
            || c.is::<texbank::Error>()
            || c.is::<std::io::Error>()
            || c.is::<toml::de::Error>()
            || c.is::<serde_json::Error>()
            || c.is::<csv::Error>()
    })
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let overrides = match &cli.command {
        Command::FitVocab(a) => Some(&a.overrides),
        Command::Encode(a) => Some(&a.overrides),
        _ => None,
    };
    if let Some(o) = overrides {
        if let Some(e) = o.encoder {
            cfg.encoder.kind = e;
        }
        if let Some(k) = o.k {
            cfg.vocab.k = k;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(UserError("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()?;
    }
    let cfg = load_config(&cli)?;
    let env = Env::new(cfg, cli.out.clone())?;
    match cli.command {
        Command::Synth(a) => stages::synth(&env, a.per_class, a.size),
        Command::Extract(a) => stages::extract(&env, &a.manifest),
        Command::FitVocab(a) => stages::fit_vocab(&env, a.fields).map(|_| ()),
        Command::Encode(a) => stages::encode(&env, a.fields, a.vocab),
        Command::Train(a) => stages::train(&env, a.encoded),
        Command::Predict(a) => stages::predict(&env, a.encoded, a.model, &a.split),
        Command::Evaluate(a) => stages::evaluate(&env, a.predictions, a.allow_lineage_mismatch),
        Command::Segment(a) => stages::segment(
            &env,
            &a.image,
            &a.proposals,
            a.vocab,
            a.model,
            a.ground_truth,
        ),
        Command::Annosim(a) => {
            stages::annosim(&env, &a.ground_truth, a.scores.as_deref(), a.budgets)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            if is_user_error(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
        Err(_) => ExitCode::from(2),
    }
}
