//! Command-line front end: argument parsing, config resolution and the
//! subcommands behind the `defocus` binary.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use defocus::Config;

mod commands;
mod demo;

pub use demo::{run_demo, DemoArgs, DemoSummary};

/// Exit status for success.
pub const EXIT_OK: u8 = 0;
/// Exit status for numeric or convergence failures.
pub const EXIT_NUMERIC: u8 = 1;
/// Exit status for usage and input errors.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "defocus", version, about = "Defocus map estimation from a single image")]
pub struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs. Defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// `key = value` config file applied over the defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one config key, e.g. `--set alpha=0.4`. Repeatable; wins over
    /// the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a directory of in-focus images.
    Train(TrainArgs),
    /// Estimate sparse and dense defocus maps for one image.
    Estimate(EstimateArgs),
    /// Threshold a defocus map into a blurry/sharp mask.
    Segment(SegmentArgs),
    /// Score defocus maps against ground-truth masks.
    Evaluate(EvaluateArgs),
    /// Exaggerate background blur using a defocus map.
    Magnify(MagnifyArgs),
    /// Generate a synthetic corpus, train, estimate and evaluate end to end.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of PNG/PPM/PGM training images.
    #[arg(long)]
    pub images: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss and accuracy CSV. Defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Also write the training descriptors as a dataset file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Also write the patch manifest CSV.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Output prefix; maps are written as `<prefix>_IS.dfkmap` and so on.
    #[arg(long)]
    pub out: PathBuf,
    /// Add random seeds in edge-free regions.
    #[arg(long)]
    pub seed_homogeneous: bool,
    /// Write the edge map as PGM (0 none, 128 weak, 255 strong).
    #[arg(long)]
    pub dump_edges: bool,
    /// Write per-patch descriptors as CSV.
    #[arg(long)]
    pub dump_features: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Dense defocus map (`.dfkmap`).
    #[arg(long)]
    pub map: PathBuf,
    /// Output mask (PGM or PNG), 255 = blurry.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// A `.dfkmap` file or a directory of them.
    #[arg(long)]
    pub maps: PathBuf,
    /// Directory of ground-truth masks named after the maps.
    #[arg(long)]
    pub gt: PathBuf,
    /// Per-image accuracy CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Pooled precision-recall CSV over the σ ladder.
    #[arg(long)]
    pub pr: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MagnifyArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Background blur multiplier (≥ 1).
    #[arg(long, default_value_t = 2.0)]
    pub factor: f64,
}

/// A failed command with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: anyhow::Error) -> Self {
        Self { code: EXIT_USAGE, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let numeric = error
            .chain()
            .any(|e| e.downcast_ref::<defocus::Error>().is_some_and(|d| d.is_numeric()));
        Self {
            code: if numeric { EXIT_NUMERIC } else { EXIT_USAGE },
            error,
        }
    }
}

/// Defaults, then the config file, then `--set` overrides.
pub fn resolve_config(file: Option<&Path>, overrides: &[String]) -> anyhow::Result<Config> {
    let mut cfg = match file {
        Some(p) => Config::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => Config::default(),
    };
    for o in overrides {
        cfg.apply_override(o).with_context(|| format!("--set {o}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve_config(cli.config.as_deref(), &cli.overrides).map_err(Failure::usage)?;
    if cli.threads == Some(0) {
        return Err(Failure::usage(anyhow::anyhow!("--threads must be at least 1")));
    }
    log::info!("resolved config:\n{}", cfg.render().trim_end());
    log::info!("seed: {}", cfg.seed);
    let threads = cli.threads.unwrap_or_else(defocus::par::current_threads);
    log::info!("threads: {threads}");
    defocus::par::with_threads(threads, move || match cli.command {
        Command::Train(a) => commands::train(&a, &cfg),
        Command::Estimate(a) => commands::estimate(&a, &cfg),
        Command::Segment(a) => commands::segment(&a, &cfg),
        Command::Evaluate(a) => commands::evaluate(&a, &cfg),
        Command::Magnify(a) => commands::magnify(&a, &cfg),
        Command::Demo(a) => demo::run_demo(&a, &cfg).map(|_| ()),
    })
    .map_err(Failure::from)
}

/// Sets up logging for the given verbosity.
pub fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
}
