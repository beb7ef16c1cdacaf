//! Dataset preparation, tiling, fold splits and the training loop.

mod data;
mod fit;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{LrSchedule, TensorError};
use crate::features::{AuxSelection, FeatureError};
use crate::grid_io::GridError;
use crate::models::{CldNet, CldNetConfig, ModelError};

pub use data::{load_statics, split_dataset, split_into, tile_scene, untile, InputSpec, TileBatch};
pub use fit::{
    fit, labeled_accuracy, load_trained, resume, score_entries, BatchRecord, EarlyStopping, EpochRecord,
    FitResult, StopDecision, TrainState, EPOCH_LOG_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scene {rows}×{cols} is not divisible into {tile}-pixel tiles; pad by {pad_rows} rows and {pad_cols} columns")]
    Indivisible {
        rows: usize,
        cols: usize,
        tile: usize,
        pad_rows: usize,
        pad_cols: usize,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        /// Best model seen before the failure, if any epoch completed.
        last_good: Option<Box<CldNet>>,
    },
}

/// Input recipe and model role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// 76 reorganized channels, no auxiliaries.
    Base,
    /// Viewing angles added; intended for daytime areas.
    CldNetW,
    /// As `CldNetW` with VIS/NIR channels masked; usable at night.
    CldNetO,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Base => "base",
            Mode::CldNetW => "cldnet-w",
            Mode::CldNetO => "cldnet-o",
        })
    }
}

impl FromStr for Mode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" | "cldnet" => Ok(Mode::Base),
            "cldnet-w" | "w" => Ok(Mode::CldNetW),
            "cldnet-o" | "o" => Ok(Mode::CldNetO),
            other => Err(TrainError::Config(format!(
                "unknown mode {other:?} (expected base, cldnet-w or cldnet-o)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub tile_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Validation loss must drop by more than this to count as improvement.
    pub min_delta: f64,
    pub folds: usize,
    pub validation_fold: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Overrides the mode's auxiliary channels.
    pub aux: Option<AuxSelection>,
    /// Architecture; `in_channels` is derived from the input recipe.
    pub model: CldNetConfig,
    pub schedule: LrSchedule,
    /// Directory holding `altitude.raster` / `land_water.raster`.
    pub static_dir: Option<PathBuf>,
    /// Where the best checkpoint is written whenever it improves.
    pub checkpoint_path: Option<PathBuf>,
    /// Keep prepared tiles in memory between epochs.
    pub cache_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tile_size: 480,
            max_epochs: 200,
            patience: 10,
            min_delta: 0.0,
            folds: 5,
            validation_fold: 0,
            seed: 0,
            mode: Mode::CldNetW,
            aux: None,
            model: CldNetConfig::default(),
            schedule: LrSchedule::standard(),
            static_dir: None,
            checkpoint_path: None,
            cache_features: true,
        }
    }
}

impl TrainConfig {
    pub fn input_spec(&self) -> InputSpec {
        let mut spec = InputSpec::for_mode(self.mode);
        if let Some(aux) = self.aux {
            spec.aux = aux;
        }
        spec
    }

    /// Architecture with `in_channels` matching the input recipe.
    pub fn model_config(&self) -> CldNetConfig {
        CldNetConfig {
            in_channels: self.input_spec().channels(),
            ..self.model.clone()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        let m = self.model.size_multiple();
        if self.tile_size == 0 || self.tile_size % m != 0 {
            return bad(format!("tile_size {} must be a positive multiple of {m}", self.tile_size));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.folds < 2 || self.validation_fold >= self.folds {
            return bad(format!(
                "validation fold {} invalid for {} folds",
                self.validation_fold, self.folds
            ));
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative".into());
        }
        self.input_spec().mask.validate()?;
        self.model_config().validate()?;
        Ok(())
    }
}
