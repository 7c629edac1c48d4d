//! Command-line front end: argument definitions, config-file merging and
//! command dispatch. `main.rs` only parses and reports errors.

mod commands;
mod models;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};

pub use models::AnyModel;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "powermamba",
    version,
    about = "Grid time-series forecasting and demand-response portfolio tools"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Master seed; every random stream (init, shuffle, dropout, mc) derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// key=value file merged beneath command-line flags.
    #[arg(long, global = true, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic GridSet-shaped dataset.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus loss curve.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a freshly initialized model) on the test split.
    Eval(EvalArgs),
    /// Emit one W-hour forecast with timestamps.
    Forecast(ForecastArgs),
    /// Grid search over learning rate, embedding length and state size.
    GridSearch(GridSearchArgs),
    /// Demand-response portfolio and price-driven profit curve.
    Dr(DrArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Years of hourly data (hours = round(years * 8760)).
    #[arg(long, default_value_t = 1.0)]
    pub years: f64,
    /// Also write a file with per-hour forecast columns.
    #[arg(long)]
    pub with_forecasts: bool,
    /// Forecast horizon of the extended file.
    #[arg(long, default_value_t = 24)]
    pub horizon: usize,
    /// Forecast error standard deviation as a fraction of the channel std.
    #[arg(long, default_value_t = 0.1)]
    pub noise_frac: f64,
    /// Relative error growth from the first to the last forecast hour.
    #[arg(long, default_value_t = 1.0)]
    pub growth: f64,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Powermamba,
    Fused,
    Dlinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormArg {
    Revin,
    Zscore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillArg {
    RepeatLast,
    Zero,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct DataArgs {
    /// Dataset CSV (timestamp + channels, optional `<channel>__f<h>` forecast columns).
    #[arg(long, value_name = "CSV", conflicts_with = "synth_years")]
    pub data: Option<PathBuf>,
    /// Use a synthetic dataset of this many years instead of --data.
    #[arg(long, value_name = "YEARS")]
    pub synth_years: Option<f64>,
    /// Generate forecast columns for the synthetic dataset.
    #[arg(long)]
    pub synth_forecasts: bool,
    /// Forecast error fraction of the synthetic dataset.
    #[arg(long, default_value_t = 0.1)]
    pub synth_noise: f64,
    /// Forecast error growth of the synthetic dataset.
    #[arg(long, default_value_t = 1.0)]
    pub synth_growth: f64,
    /// Fraction of rows used for training (and standardization statistics).
    #[arg(long, default_value_t = 0.8)]
    pub train_frac: f64,
    /// Look-back length L.
    #[arg(long, default_value_t = 240)]
    pub context: usize,
    /// Prediction window W.
    #[arg(long, default_value_t = 24)]
    pub horizon: usize,
    /// Step between training windows.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Powermamba)]
    pub model: ModelKind,
    /// Embedding length E.
    #[arg(long, default_value_t = 64)]
    pub embed: usize,
    /// SSM state size N.
    #[arg(long, default_value_t = 16)]
    pub state: usize,
    #[arg(long, default_value_t = 25)]
    pub ma_kernel: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, value_enum, default_value_t = NormArg::Revin)]
    pub norm: NormArg,
    /// Fill for channels without external forecasts (fused model).
    #[arg(long, value_enum, default_value_t = FillArg::RepeatLast)]
    pub fill: FillArg,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Keep the window order fixed across epochs.
    #[arg(long)]
    pub no_shuffle: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Trained checkpoint; without it a freshly initialized model is scored.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ForecastArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Timestamp of the last context hour (default: the last row of the data).
    #[arg(long, value_name = "YYYY-MM-DDTHH:MM:SS")]
    pub at: Option<String>,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GridSearchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.001")]
    pub lrs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub embeds: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    pub states: Vec<usize>,
    /// Tail fraction of the training rows held out for validation.
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DrArgs {
    /// Programs CSV: program,kind,theta,series.
    #[arg(long, value_name = "CSV")]
    pub programs: PathBuf,
    /// Economics CSV: btc_price,efficiency[,energy_cost].
    #[arg(long, value_name = "CSV")]
    pub economics: PathBuf,
    /// Hourly LMP series (observed or forecast).
    #[arg(long, value_name = "CSV")]
    pub lmp: PathBuf,
    #[arg(long, default_value = "lmp")]
    pub lmp_column: String,
    /// Total mining capacity C in MW.
    #[arg(long, default_value_t = 1.0)]
    pub capacity: f64,
    /// Threshold grid for the profit curve ($/MWh).
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,25,50,75,100,150,200,300,500,1000"
    )]
    pub thetas: Vec<f64>,
    /// Gaussian LMP noise std ($/MWh) for the Monte-Carlo band.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    /// Residuals CSV (column `residual`) to resample instead of Gaussian noise.
    #[arg(long, value_name = "CSV")]
    pub noise_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub runs: usize,
    /// Report a [q, 1-q] quantile band instead of min/max.
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Forecast(_) => "forecast",
            Command::GridSearch(_) => "grid-search",
            Command::Dr(_) => "dr",
        }
    }
}

/// Inserts `--key value` pairs from a config file right after the
/// subcommand, so flags given on the command line win.
fn merge_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let pos = args.iter().position(|a| a == "--config");
    let path = match pos.and_then(|i| args.get(i + 1)) {
        Some(p) => PathBuf::from(p),
        None => match args
            .iter()
            .find_map(|a| a.to_str()?.strip_prefix("--config=").map(PathBuf::from))
        {
            Some(p) => p,
            None => return Ok(args),
        },
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Schema {
            file: path.display().to_string(),
            row: Some(n + 1),
            column: None,
            msg: format!("expected key=value, got `{line}`"),
        })?;
        let (k, v) = (k.trim().replace('_', "-"), v.trim());
        match v {
            "true" => extra.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => {
                extra.push(OsString::from(format!("--{k}")));
                extra.push(OsString::from(v));
            }
        }
    }
    let sub = args
        .iter()
        .skip(1)
        .position(|a| {
            ["synth", "train", "eval", "forecast", "grid-search", "dr"]
                .contains(&a.to_str().unwrap_or(""))
        })
        .map(|i| i + 2)
        .unwrap_or(args.len());
    let mut merged = args[..sub].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&args[sub..]);
    Ok(merged)
}

/// Parses (after config merging); clap errors carry their own exit codes.
pub fn parse<I, T>(args: I) -> std::result::Result<Result<Cli>, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    match merge_config(args) {
        Ok(merged) => Cli::try_parse_from(merged).map(Ok),
        Err(e) => Ok(Err(e)),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    commands::run(cli)
}

/// Convenience for tests: parse and run in-process.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    match parse(args) {
        Ok(Ok(cli)) => run(&cli),
        Ok(Err(e)) => Err(e),
        Err(e) => Err(Error::Config(e.to_string())),
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
