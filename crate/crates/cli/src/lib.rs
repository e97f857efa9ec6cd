//! The `spclt` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or file
//! format error, 3 numeric failure.

mod commands;
mod labels;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spclt_core::dataio::NormMode;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// Environment variable that overrides every configured seed.
pub const SEED_ENV: &str = "SPCLT_SEED";

#[derive(Debug, Parser)]
#[command(name = "spclt", version, about = "Structure-preserving contrastive learning for time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an encoder and write a run directory.
    Train(TrainArgs),
    /// Encode a dataset with a trained checkpoint.
    Encode(EncodeArgs),
    /// Local and global structure-preservation metrics.
    Evaluate(EvaluateArgs),
    /// Staged hyperparameter search.
    GridSearch(GridArgs),
    /// k-NN classification of instance representations.
    Classify(ClassifyArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Compare run directories in one table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Norm {
    None,
    Instance,
    Dataset,
}

impl Norm {
    fn mode(self) -> Option<NormMode> {
        match self {
            Norm::None => None,
            Norm::Instance => Some(NormMode::PerInstance),
            Norm::Dataset => Some(NormMode::PerDataset),
        }
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset in `.ts` or long-format `.csv`.
    #[arg(long)]
    data: PathBuf,
    /// z-normalisation applied after loading.
    #[arg(long, value_enum, default_value = "instance")]
    normalize: Norm,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON training configuration; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Method identifier, overriding the configuration file.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Checkpoint file or run directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output `.spcl` file.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV export of the instance representations.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    repr: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON search plan; omitted fields take defaults.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Parallel runs per stage.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    train_repr: PathBuf,
    /// Labels as a dataset file (`.ts`/`.csv`) or one label per line.
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    test_repr: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = "sinusoid")]
    kind: String,
    #[arg(long, default_value_t = 60)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    t: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Defaults to 0.
    #[arg(long)]
    seed: Option<u64>,
    /// `.ts` or `.csv` output; `.ts` text goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directories written by `train`.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Write the long-format table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(spclt_core::Error),
}

impl From<spclt_core::Error> for CliError {
    fn from(e: spclt_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_data_error() => EXIT_DATA,
            CliError::Core(e) if e.is_numeric_error() => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Encode(a) => commands::encode(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::GridSearch(a) => commands::grid_search(a),
        Command::Classify(a) => commands::classify(a),
        Command::Synth(a) => commands::synth(a),
        Command::Report(a) => report::report(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("spclt: {e}");
            e.exit_code()
        }
    }
}

/// Seed precedence: explicit flag, then `SPCLT_SEED`, then the fallback.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}
