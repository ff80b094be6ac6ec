//! The `lgcd` command line: training, evaluation, inference, synthetic data
//! generation and gradient checking.

mod commands;
mod config;
mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use commands::{eval, gen_data, gradcheck, infer, train};
pub use config::RunConfig;
pub use error::{CliError, EXIT_CONFIG, EXIT_FAILURE, EXIT_MISSING_DATA, EXIT_UNKNOWN_TOKEN};

#[derive(Debug, Parser)]
#[command(name = "lgcd", version, about = "Language-guided change detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a dataset directory and write a checkpoint and loss log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write a metrics CSV.
    Eval(EvalArgs),
    /// Predict the change mask for one image pair and prompt.
    Infer(InferArgs),
    /// Sample synthetic scenes and write them as a dataset directory.
    GenData(GenDataArgs),
    /// Run the 64-bit finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

/// Options shared by commands that read a run configuration.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Keep both encoders fixed.
    #[arg(long)]
    pub freeze_encoder: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Replace every sample's prompt before scoring.
    #[arg(long)]
    pub prompt: Option<String>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub image_a: PathBuf,
    #[arg(long)]
    pub image_b: PathBuf,
    #[arg(long)]
    pub prompt: String,
    /// Also write per-scale attention and gate maps.
    #[arg(long)]
    pub heatmaps: bool,
    /// Tile side for images that are not a multiple of 32 or larger than it.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// JSON sampler settings (per-class event counts).
    #[arg(long)]
    pub sampler: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Elements checked per parameter tensor of the full model.
    #[arg(long, default_value_t = 3)]
    pub per_param: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Infer(a) => infer(&a),
        Command::GenData(a) => gen_data(&a),
        Command::Gradcheck(a) => gradcheck(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::new(EXIT_FAILURE, format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::new(EXIT_FAILURE, format!("{}: {e}", path.display())))
}
