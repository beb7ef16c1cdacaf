//! Network input assembly.
//!
//! The knowledge module reorganizes the sixteen normalized bands into 76
//! channels: the bands themselves followed by every same-kind pairwise
//! difference. The mask module zeroes channels that involve chosen bands
//! (VIS/NIR for nighttime use). Auxiliary viewing-geometry and static
//! channels may be appended after channel 75.

mod aux;
mod geometry;
mod knowledge;
mod mask;

use thiserror::Error;

use crate::grid_io::BandId;

pub use aux::{
    auxiliary_grid, auxiliary_window, concat_aux, AuxField, AuxSelection, AuxiliaryGrid, StaticGrids,
    HIMAWARI_SUB_LONGITUDE,
};
pub use geometry::{satellite_view, solar_position, SatelliteView, SolarAngles, GEO_RADIUS_KM, EARTH_RADIUS_KM};
pub use knowledge::{base_layout, build_feature_stack, BASE_CHANNELS};
pub use mask::{apply_mask, masked_channels, MaskConfig};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid mask configuration: {0}")]
    Mask(String),
    #[error("invalid auxiliary data: {0}")]
    Aux(String),
}

/// Where a feature channel's values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelSource {
    Band(BandId),
    /// `first - second`, both normalized.
    Difference(BandId, BandId),
    Aux(AuxField),
}

impl ChannelSource {
    /// Bands whose content reaches this channel.
    pub fn bands(&self) -> Vec<BandId> {
        match *self {
            ChannelSource::Band(b) => vec![b],
            ChannelSource::Difference(a, b) => vec![a, b],
            ChannelSource::Aux(_) => Vec::new(),
        }
    }
}

/// C×H×W feature channels with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub layout: Vec<ChannelSource>,
}

impl FeatureStack {
    pub fn channels(&self) -> usize {
        self.layout.len()
    }

    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Copies a spatial window of every channel.
    pub fn crop(&self, row: usize, col: usize, rows: usize, cols: usize) -> FeatureStack {
        let mut data = Vec::with_capacity(self.channels() * rows * cols);
        for c in 0..self.channels() {
            let plane = self.channel(c);
            for r in row..row + rows {
                let start = r * self.cols + col;
                data.extend_from_slice(&plane[start..start + cols]);
            }
        }
        FeatureStack {
            rows,
            cols,
            data,
            layout: self.layout.clone(),
        }
    }
}
