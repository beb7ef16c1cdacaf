//! Confusion matrices, classification metrics, error-density maps,
//! clear-sky confidence and cross-resolution comparison.

mod confusion;
mod density;
mod resolution;

use thiserror::Error;

use crate::grid_io::{GridError, Plane};

pub use confusion::{confusion, metrics, ConfusionMatrix, MetricsReport};
pub use density::{density_difference, error_density, ErrorDensityMap, DENSITY_CELLS};
pub use resolution::{cross_resolution_compare, resample_nearest, CrossResolutionReport};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("prediction is unlabeled at cell {index} where the reference is labeled")]
    UnlabeledPrediction { index: usize },
    #[error("malformed {what}: {reason}")]
    Parse { what: &'static str, reason: String },
}

/// Brightness temperature (K) at which the confidence reaches 0 %.
pub const CLEAR_SKY_COLD_K: f32 = 270.0;
/// Brightness temperature (K) at which the confidence reaches 100 %.
pub const CLEAR_SKY_WARM_K: f32 = 288.0;

/// Clear-sky confidence in percent from B14 brightness temperature (K).
///
/// Linear between 270 K and 288 K, clamped to [0, 100]. NaN stays NaN.
pub fn clear_sky_confidence(b14: &Plane<f32>) -> Plane<f32> {
    let span = CLEAR_SKY_WARM_K - CLEAR_SKY_COLD_K;
    Plane {
        rows: b14.rows,
        cols: b14.cols,
        data: b14
            .data
            .iter()
            .map(|&t| ((t - CLEAR_SKY_COLD_K) / span * 100.0).clamp(0.0, 100.0))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confidence_endpoints() {
        let p = Plane::from_vec(1, 6, vec![288.0, 270.0, 279.0, 250.0, 300.0, f32::NAN]);
        let c = clear_sky_confidence(&p);
        assert_eq!(&c.data[..5], &[100.0, 0.0, 50.0, 0.0, 100.0]);
        assert!(c.data[5].is_nan());
    }
}
