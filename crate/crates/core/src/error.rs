use thiserror::Error;

use crate::autodiff::TensorError;
use crate::evaluation::EvalError;
use crate::features::FeatureError;
use crate::grid_io::GridError;
use crate::inference::InferenceError;
use crate::models::ModelError;
use crate::training::TrainError;

/// Crate-level error joining the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

pub type Result<T> = std::result::Result<T, Error>;
