//! `psci-rater` command implementations. `main.rs` only parses arguments and
//! maps the result to an exit code; everything here takes explicit I/O handles
//! so it can be driven from tests.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod collect;
pub mod commands;
pub mod config;

pub use config::Config;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_PROVIDER: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Provider(_) => EXIT_PROVIDER,
        }
    }
}

/// Terminal streams for one command invocation.
pub struct Io<'a> {
    pub input: &'a mut dyn BufRead,
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

#[derive(Debug, Parser)]
#[command(name = "psci-rater", version, about = "Rate pavement surface condition (PSCI 1-10) with vision LLMs and compare against human raters")]
pub struct Cli {
    /// TOML settings file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the PSCI rating standard
    Rubric {
        /// Only this level
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=10))]
        level: Option<u8>,
    },
    /// Download Street View frames listed in a manifest into a local cache
    FetchGsv(FetchGsvArgs),
    /// Rate every image with every selected prompt profile, n times each
    Assess(AssessArgs),
    /// Enter one person's ratings for a manifest interactively
    CollectRatings(CollectArgs),
    /// Compute agreement statistics and write the evaluation report
    Evaluate(EvaluateArgs),
    /// Render a saved report as a table, JSON, or plot-ready CSVs
    Report(ReportArgs),
    /// Write the rendered prompt of each profile to text files
    Prompts(PromptsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FetchGsvArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Cache root; frames land in <cache-dir>/gsv/
    #[arg(long, default_value = "cache")]
    pub cache_dir: PathBuf,
    /// Updated manifest (default: <manifest stem>.fetched.json next to the input)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MockKind {
    EchoTruth,
    Fixed,
    Offset,
    Noisy,
    MalformedThenValid,
}

#[derive(Debug, Clone, Args)]
pub struct AssessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSONL run store; existing records are kept and skipped
    #[arg(long, default_value = "runs.jsonl")]
    pub store: PathBuf,
    /// `all` or a comma-separated list such as model1,model5
    #[arg(long, default_value = "all")]
    pub models: String,
    #[arg(long)]
    pub runs: Option<u32>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Corrective re-asks allowed when a reply has no rating
    #[arg(long)]
    pub parse_retries: Option<u32>,
    /// Use a deterministic offline provider instead of the API
    #[arg(long, value_enum)]
    pub mock: Option<MockKind>,
    /// fixed: the rating returned
    #[arg(long, default_value_t = 6)]
    pub mock_value: i64,
    /// offset: added to the truth
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    pub mock_delta: i64,
    /// noisy: RNG seed
    #[arg(long, default_value_t = 0)]
    pub mock_seed: u64,
    /// noisy: standard deviation
    #[arg(long, default_value_t = 1.0)]
    pub mock_sigma: f64,
    /// malformed-then-valid: bad replies before the valid one
    #[arg(long, default_value_t = 1)]
    pub mock_bad: u32,
    /// API base URL (default from config or PSCI_LLM_BASE_URL)
    #[arg(long)]
    pub base_url: Option<String>,
    /// Provider model name (default from config or PSCI_LLM_MODEL)
    #[arg(long)]
    pub model_name: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Discard the existing store first
    #[arg(long)]
    pub fresh: bool,
    /// Do not ask before discarding
    #[arg(long)]
    pub yes: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CollectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub assessor: String,
    /// expert, intermediate or novice
    #[arg(long)]
    pub kind: String,
    /// Ratings table (default: the manifest's reference_ratings)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReferenceArg {
    GroundTruth,
    Consensus,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "runs.jsonl")]
    pub store: PathBuf,
    /// Human ratings table (default: the manifest's reference_ratings)
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub reference: ReferenceArg,
    /// Candidate experts for the consensus (default: all expert columns)
    #[arg(long, value_delimiter = ',')]
    pub experts: Option<Vec<String>>,
    #[arg(long)]
    pub outlier_threshold: Option<f64>,
    /// Leave flagged assessors out of PCA and group summaries
    #[arg(long)]
    pub exclude_outliers: bool,
    /// Scale each image dimension to unit variance before PCA
    #[arg(long)]
    pub zscore: bool,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Also write the plot CSVs here
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long, default_value = "report.json")]
    pub report: PathBuf,
    /// table, json or csv
    #[arg(long, default_value = "table")]
    pub format: String,
    /// Directory for csv output (default: next to the report)
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PromptsArgs {
    #[arg(long, default_value = "prompts")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "all")]
    pub models: String,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_with<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(io.err, "{text}");
            } else {
                let _ = write!(io.out, "{text}");
            }
            return code;
        }
    };
    match dispatch(&cli, io) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(io.err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Runs an already parsed command.
pub fn dispatch(cli: &Cli, io: &mut Io<'_>) -> Result<i32, CliError> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Rubric { level } => commands::rubric(*level, io),
        Command::FetchGsv(args) => commands::fetch_gsv_live(args, io),
        Command::Assess(args) => commands::assess(args, &config, io),
        Command::CollectRatings(args) => collect::collect_ratings(args, io),
        Command::Evaluate(args) => commands::evaluate(args, &config, io),
        Command::Report(args) => commands::report(args, io),
        Command::Prompts(args) => commands::prompts(args, io),
    }
}
