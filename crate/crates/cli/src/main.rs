//! `ndvkit`: one binary for the whole pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use ndvkit_core::{embed_store, DEFAULT_BASE_EPOCH, DEFAULT_MARGIN, DEFAULT_SCREENSAVER_THRESHOLD, DEFAULT_WINDOW};

#[derive(Debug, Parser)]
#[command(name = "ndvkit", about = "Near-duplicate video search and dataset hygiene")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert JSONL embeddings into a binary store.
    Ingest(IngestArgs),
    /// Rank every query/gallery pair by intersection score.
    Score(ScoreArgs),
    /// Build a search curve and write it as CSV.
    Curve(CurveArgs),
    /// Extrapolate the total number of duplicates from assessment progress.
    Estimate(EstimateArgs),
    /// Remove train records linked to any test record.
    Clean(CleanArgs),
    /// Draw training examples across datasets.
    Sample(SampleArgs),
    /// Retrieval metrics and ranking loss for a similarity matrix.
    Eval(EvalArgs),
    /// Run the assessment HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSONL files with `video_id`, `frames` and optional `weights`.
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScreensaverArgs {
    /// Store of screensaver frames to suppress.
    #[arg(long)]
    pub blacklist: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SCREENSAVER_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub k: usize,
    /// Thread count, 0 for one per core. Output does not depend on it.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[command(flatten)]
    pub screensaver: ScreensaverArgs,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Positive scores, one per line.
    #[arg(long, requires = "negatives", conflicts_with_all = ["query", "gallery"])]
    pub positives: Option<PathBuf>,
    /// Negative scores, one per line.
    #[arg(long, requires = "positives")]
    pub negatives: Option<PathBuf>,
    /// Query store. Positives pair each query with its augmented copy.
    #[arg(long, requires = "gallery")]
    pub query: Option<PathBuf>,
    /// Gallery store. Negatives are all query/gallery scores.
    #[arg(long, requires = "query")]
    pub gallery: Option<PathBuf>,
    /// Embeddings re-extracted from augmented queries, keyed by the same ids.
    /// Without it a noise surrogate is used.
    #[arg(long, requires = "query")]
    pub augmented: Option<PathBuf>,
    /// Seed for augmentation plans and surrogate noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the augmentation plan here as JSONL.
    #[arg(long)]
    pub plan_out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[command(flatten)]
    pub screensaver: ScreensaverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub curve: PathBuf,
    /// Negatives seen so far.
    #[arg(long)]
    pub seen: u64,
    /// Duplicates found so far.
    #[arg(long)]
    pub found: u64,
    /// Print the full report instead of the bare total.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub manifests: Vec<PathBuf>,
    /// Verdict JSONL or a verdict log. Only duplicate verdicts matter.
    #[arg(long, num_args = 0..)]
    pub verdicts: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// JSON config with `entries`, `base_epoch`, `seed`, `batch_size`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub manifests: Vec<PathBuf>,
    /// Restrict sampling to these datasets. The default draw count is then
    /// their share of the full epoch.
    #[arg(long, value_delimiter = ',')]
    pub datasets: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub epoch: u32,
    #[arg(long, default_value_t = 0)]
    pub worker: u32,
    /// Draws to make. Defaults to the epoch length of the selected datasets.
    #[arg(long)]
    pub count: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON object with `similarities` (rows of queries) and optional
    /// `ground_truth`. Without ground truth the diagonal matches.
    #[arg(long)]
    pub sims: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 5, 10])]
    pub ks: Vec<usize>,
    /// Also report the ranking loss.
    #[arg(long)]
    pub loss: bool,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Ranked candidate file from `score`.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub query_dataset: String,
    #[arg(long)]
    pub gallery_dataset: String,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, num_args = 0..)]
    pub manifests: Vec<PathBuf>,
    #[arg(long, default_value = ndvkit_apid::DEFAULT_MEDIA_TEMPLATE)]
    pub media_template: String,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

fn version() -> String {
    format!(
        "{} (store format {}, default base epoch {})",
        env!("CARGO_PKG_VERSION"),
        embed_store::FORMAT_VERSION,
        DEFAULT_BASE_EPOCH
    )
}

fn main() -> ExitCode {
    let matches = match Cli::command().version(version()).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
