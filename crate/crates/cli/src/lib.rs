//! The `featscope` command line.
//!
//! Every subcommand reads a [`config::RunConfig`] (file plus flag
//! overrides), runs one pipeline step and writes its artifacts to the output
//! directory. Exit codes: 0 on success, 1 on a domain failure, 2 on a usage
//! error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod config;
pub mod report;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(anyhow::Error),
}

impl From<featscope::Error> for CliError {
    fn from(e: featscope::Error) -> Self {
        CliError::Domain(e.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Domain(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "featscope", version, about = "Sparse feature discovery and plausibility metrics")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override any configuration key, e.g. `--set epochs=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an activation dataset and copy it into the output directory.
    Ingest(IngestArgs),
    /// Train the plausibility classifier head on labeled embeddings.
    TrainHead(TrainHeadArgs),
    /// Write the head's hidden activations for a dataset.
    DumpHidden(DumpHiddenArgs),
    /// Train a sparse dictionary model.
    TrainDict(TrainDictArgs),
    /// Build per-latent activation statistics.
    Scan(ScanArgs),
    /// Wrong ratios, population relevance and the relevance histogram.
    Metrics(MetricsArgs),
    /// Describe latents with a multimodal model (or canned responses).
    Interpret(InterpretArgs),
    /// Mean relevant-latent count per image source.
    Benchmark(BenchmarkArgs),
    /// Render summary tables from JSON artifacts.
    Report(ReportArgs),
    /// Generate a planted-feature dataset with known ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Prefix of an existing `.actv` / `.meta.jsonl` pair.
    #[arg(long, conflicts_with = "jsonl")]
    pub from: Option<PathBuf>,
    /// JSON lines with `id`, `label`, `caption`, `source` and `vector`.
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
    /// Config key naming the destination (`embeddings`, `bench`, ...).
    #[arg(long, default_value = "embeddings")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct TrainHeadArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DumpHiddenArgs {
    /// Config key of the input dataset.
    #[arg(long, default_value = "embeddings")]
    pub input: String,
    /// Config key of the output dataset.
    #[arg(long, default_value = "hidden")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct TrainDictArgs {
    #[arg(long)]
    pub kind: Option<String>,
    /// Continue from a checkpoint with fresh optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub sizes: Option<String>,
    #[arg(long)]
    pub sparsities: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub theta_rule: Option<String>,
    #[arg(long)]
    pub level: Option<usize>,
    #[arg(long)]
    pub min_support: Option<usize>,
    #[arg(long)]
    pub include_unlabeled: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub bin_width: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InterpretArgs {
    /// Directory of canned responses; no network access.
    #[arg(long)]
    pub mock: Option<PathBuf>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Comma-separated latent indices to interpret.
    #[arg(long)]
    pub features: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Prefix of the generated-image dataset.
    #[arg(long)]
    pub bench: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Further output directories whose artifacts join the tables.
    #[arg(long)]
    pub include: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub bench_rows: Option<usize>,
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("usage error: {msg}"),
                CliError::Domain(err) => eprintln!("error: {err:#}"),
            }
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::new(cli.global.out.clone());
    if let Some(path) = &cli.global.config {
        cfg.load_file(path)?;
    }
    for kv in &cli.global.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.set_opt("seed", cli.global.seed)?;
    std::fs::create_dir_all(cfg.out())
        .map_err(|e| CliError::Domain(anyhow::anyhow!("cannot create {}: {e}", cfg.out().display())))?;
    commands::run(cli.command, &mut cfg)
}
