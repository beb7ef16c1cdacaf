mod commands;
mod config;
mod palette;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Cloud-type classification from gridded multispectral scenes.
#[derive(Debug, Parser)]
#[command(name = "kbdd", version)]
pub struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// base, cldnet-w or cldnet-o.
    #[arg(long, global = true)]
    pub mode: Option<String>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Tile (core) size in pixels.
    #[arg(long, global = true)]
    pub tile: Option<usize>,
    /// Overlap added around each inference tile.
    #[arg(long, global = true)]
    pub halo: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Band histograms and derived value ranges.
    Stats {
        manifest: PathBuf,
        #[arg(long, default_value_t = 1000)]
        bins: usize,
    },
    /// Writes a synthetic dataset with a manifest.
    Synth,
    /// Trains a model with early stopping.
    Train { manifest: PathBuf },
    /// Predicts label rasters with tiled inference.
    Predict {
        /// Scene rasters.
        scenes: Vec<PathBuf>,
        /// Predict every test-split scene of a manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Model used for scenes flagged as nighttime.
        #[arg(long)]
        night_checkpoint: Option<PathBuf>,
        /// Directory holding altitude.raster and land_water.raster.
        #[arg(long)]
        statics: Option<PathBuf>,
        /// Also write the max-probability plane.
        #[arg(long)]
        probability: bool,
    },
    /// Metrics, confusion matrix and error density.
    Evaluate {
        #[arg(long)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        reference: Vec<PathBuf>,
        /// Pair the test split of a manifest with predictions in --pred-dir.
        #[arg(long, requires = "pred_dir")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        /// Second prediction for an error-density difference map.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        cells: usize,
    },
    /// Compares a fine prediction with a coarse reference both ways.
    CompareResolution {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Renders a label raster as a PNG image.
    Render {
        labels: PathBuf,
        #[arg(long)]
        png: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("kbdd: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
