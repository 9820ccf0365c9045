//! The `scorevc` command line.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or
//! numerical failure (including failed validation checks).

mod commands;
mod run_config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

pub use run_config::RunConfig;

use crate::error::Error;

/// Environment variable supplying the default `--data-dir`.
pub const DATA_ROOT_ENV: &str = "SCOREVC_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(name = "scorevc", version, about = "Score-based any-to-many voice conversion on feature files")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute voiced-frame statistics for one speaker.
    Stats(StatsArgs),
    /// Train a score network on several speakers.
    Train(TrainArgs),
    /// Convert one utterance toward a training speaker.
    Convert(ConvertArgs),
    /// Draw a feature sequence from a speaker's learned distribution.
    Sample(SampleArgs),
    /// DTW-aligned mel-cepstral distortion between two directories.
    Eval(EvalArgs),
    /// Run the synthetic Gaussian-mixture validation suite.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Root holding one sub-directory of `.vgf` files per speaker.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub speaker: String,
    /// Defaults to `<data-dir>/<speaker>.stats`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = DATA_ROOT_ENV)]
    pub data_dir: PathBuf,
    /// Comma-separated speaker names; their order fixes the speaker indices.
    #[arg(long, value_delimiter = ',', required = true)]
    pub speakers: Vec<String>,
    /// Directory holding `<speaker>.stats`; defaults to `--data-dir`.
    #[arg(long)]
    pub stats_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Fixed number of optimizer steps, overriding `--epochs`.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_first: f64,
    #[arg(long, default_value_t = 0.01)]
    pub sigma_last: f64,
    #[arg(long, default_value_t = 11)]
    pub levels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frames per training crop.
    #[arg(long, default_value_t = 128)]
    pub crop: usize,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NetArgs {
    #[arg(long, default_value_t = 32)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 128)]
    pub max_channels: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel_height: usize,
    #[arg(long, default_value_t = 4)]
    pub kernel_width: usize,
    #[arg(long, default_value_t = 2)]
    pub time_stride: usize,
}

#[derive(Debug, Args)]
pub struct LangevinArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Langevin updates per noise level.
    #[arg(long, default_value_t = 120)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the decimated score-norm trace to this CSV file.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub target_speaker: String,
    /// Checkpoint written by `train`; its run directory supplies the
    /// schedule and speaker statistics.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Statistics of the source speaker; defaults to statistics of the
    /// input utterance itself.
    #[arg(long)]
    pub source_stats: Option<PathBuf>,
    #[command(flatten)]
    pub langevin: LangevinArgs,
    /// One-based noise level the refinement starts at.
    #[arg(long, default_value_t = 4)]
    pub start_level: usize,
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    pub noisy: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub speaker: String,
    #[arg(long, default_value_t = 128)]
    pub frames: usize,
    #[command(flatten)]
    pub langevin: LangevinArgs,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub noisy: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub converted: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Per-utterance CSV destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// TOML suite description; every key is optional.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_validation() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl CliError {
    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

/// Runs one command; human-readable progress goes to stdout.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Stats(a) => commands::stats(&a),
        Command::Train(a) => commands::train(&a),
        Command::Convert(a) => commands::convert(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Validate(a) => commands::validate(&a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
