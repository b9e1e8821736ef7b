//! The `vhm` command line: one subcommand per pipeline stage.
//!
//! Every subcommand reads an optional key/value `--config` file, lets its
//! flags override the config, and writes its outputs under `--out`.
//! Exit codes: 0 on success, 1 on invalid input or a failed check, 2 on
//! I/O and file-format errors.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use vhm_core::model::Ratio;

pub use commands::{read_prediction_list, run, training_samples, PREDICTIONS_HEADER};

#[derive(Debug, Parser)]
#[command(name = "vhm", version, about = "Vegetation height maps from multispectral scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world: scenes, terrain, reference heights, clearings
    Synth(SynthArgs),
    /// Pool, interpolate or derive slope and aspect from a raster
    Resample(ResampleArgs),
    /// Fit a model on patches from the training scenes of every year
    Train(TrainArgs),
    /// Predict masked mean and max height for the scenes of one year
    Predict(PredictArgs),
    /// Median-composite one year of scene predictions
    Composite(CompositeArgs),
    /// Overall metrics, residual bins and density scatter
    Eval(EvalArgs),
    /// Metrics per terrain and forest-property stratum
    Strata(StrataArgs),
    /// Change objects, their box statistics and pixel-level F1
    Change(ChangeArgs),
    /// Finite-difference check of the model gradients
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    /// Keys: input, mode (mean|max|bilinear|terrain), factor, like, output
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config as written by `vhm synth`, plus model and training keys
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long, action = clap::ArgAction::Set)]
    pub with_dtm: Option<bool>,
    #[arg(long)]
    pub width_mult: Option<Ratio>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Run config; `model_dir` defaults to `--out`
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub year: u16,
}

#[derive(Debug, Args)]
pub struct CompositeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub year: u16,
    /// Prediction list; defaults to `predictions_YYYY.csv` under `--out`
    #[arg(long)]
    pub pred: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Forest mask; outliers above the cap are excluded on top of it
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StrataArgs {
    /// Optional keys: mix_rate, tree_cover, dtm, outlier_cap
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub dtm: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ChangeArgs {
    /// Optional keys: diff1m, before_10m, after_10m, forest_mask,
    /// change_reference, change_threshold, min_area, connectivity
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub diff1m: Option<PathBuf>,
    #[arg(long)]
    pub diff10m: Option<PathBuf>,
    /// Forest mask on the 10 m grid
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Model overrides on top of the tiny desk model
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    #[arg(long)]
    pub width_mult: Option<Ratio>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<vhm_core::Error> for CliError {
    fn from(e: vhm_core::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Caps the global worker pool at `VHM_THREADS` when set.
fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("VHM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("VHM_THREADS must be a positive integer, got {v:?}")))?;
    // a pool built earlier in this process is kept
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
