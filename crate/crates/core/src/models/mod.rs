//! The CldNet segmentation network and a small architecture registry.
//!
//! CldNet couples a depthwise-separable U-shaped encoder/decoder (DW-U)
//! with an atrous pyramid (DW-ASPP) applied at the coarsest encoder level.
//! The pyramid output is upsampled to full resolution, fused with the
//! decoder output and classified per pixel.

mod cldnet;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{CheckpointFile, TensorError};
use crate::grid_io::CLASS_COUNT;

pub use cldnet::{CldNet, ForwardOutput};
pub use params::{ModelParams, ParamInit, ParamSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown architecture {0:?} (available: {avail})", avail = ARCHITECTURES.join(", "))]
    UnknownArchitecture(String),
    #[error("input has {found} channels, model expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("input {rows}×{cols} is not divisible by {multiple}; pad by {pad_rows} rows and {pad_cols} columns")]
    Indivisible {
        rows: usize,
        cols: usize,
        multiple: usize,
        pad_rows: usize,
        pad_cols: usize,
    },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint does not fit this model: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Names accepted by [`build_model`].
pub const ARCHITECTURES: &[&str] = &["cldnet"];

/// Hyper-parameters of CldNet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CldNetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub stem_width: usize,
    /// Encoder/decoder width per level; the number of levels is the U depth.
    pub u_widths: Vec<usize>,
    /// Width of the two blocks at the coarsest level (0 disables them).
    pub bridge_width: usize,
    pub aspp_branch_width: usize,
    pub aspp_width: usize,
    pub aspp_dilations: [usize; 4],
    pub fuse_width: usize,
}

impl Default for CldNetConfig {
    fn default() -> Self {
        Self::with_inputs(80)
    }
}

impl CldNetConfig {
    pub fn with_inputs(in_channels: usize) -> Self {
        Self {
            in_channels,
            num_classes: CLASS_COUNT,
            stem_width: 32,
            u_widths: vec![32, 64, 128],
            bridge_width: 320,
            aspp_branch_width: 64,
            aspp_width: 128,
            aspp_dilations: [1, 6, 12, 18],
            fuse_width: 64,
        }
    }

    pub fn u_depth(&self) -> usize {
        self.u_widths.len()
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.u_depth()
    }

    /// Channel count of the coarsest feature map, which feeds the pyramid.
    pub fn bottom_width(&self) -> usize {
        if self.bridge_width > 0 {
            self.bridge_width
        } else {
            self.u_widths.last().copied().unwrap_or(self.stem_width)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.in_channels == 0 || self.stem_width == 0 || self.aspp_branch_width == 0 {
            return bad("widths must be positive");
        }
        if self.aspp_width == 0 || self.fuse_width == 0 {
            return bad("widths must be positive");
        }
        if self.u_widths.is_empty() || self.u_widths.contains(&0) {
            return bad("u_widths must be non-empty and positive");
        }
        if self.u_depth() > 6 {
            return bad("u depth above 6 is not supported");
        }
        if !(2..=255).contains(&self.num_classes) {
            return bad("num_classes must be in 2..=255");
        }
        let d = self.aspp_dilations;
        if d.contains(&0) {
            return bad("dilations must be positive");
        }
        for i in 0..4 {
            if d[i + 1..].contains(&d[i]) {
                return bad("dilations must be distinct");
            }
        }
        Ok(())
    }

    pub fn check_input(&self, channels: usize, rows: usize, cols: usize) -> Result<(), ModelError> {
        if channels != self.in_channels {
            return Err(ModelError::ChannelMismatch {
                expected: self.in_channels,
                found: channels,
            });
        }
        let m = self.size_multiple();
        if rows == 0 || cols == 0 || rows % m != 0 || cols % m != 0 {
            return Err(ModelError::Indivisible {
                rows,
                cols,
                multiple: m,
                pad_rows: rows.next_multiple_of(m).max(m) - rows,
                pad_cols: cols.next_multiple_of(m).max(m) - cols,
            });
        }
        Ok(())
    }

    /// Distance in input pixels beyond which a pixel cannot influence an
    /// output, when the pyramid's pooled branch uses a fixed global context.
    pub fn receptive_radius(&self) -> usize {
        let mut r = 0;
        let mut s = 1;
        for _ in &self.u_widths {
            r += 2 * s + s;
            s *= 2;
        }
        if self.bridge_width > 0 {
            r += 2 * s;
        }
        let encoder = r;
        let dmax = self.aspp_dilations.iter().copied().max().unwrap_or(1);
        let pyramid = encoder + dmax * s + s;
        let mut decoder = encoder;
        let mut scale = s;
        for _ in &self.u_widths {
            decoder += scale;
            scale /= 2;
            decoder += 2 * scale;
        }
        pyramid.max(decoder)
    }

    /// Smallest aligned halo for which tiled inference is exact.
    pub fn required_halo(&self) -> usize {
        self.receptive_radius().next_multiple_of(self.size_multiple())
    }

    /// Receptive radius of the encoder alone (input to the coarsest map).
    pub fn encoder_radius(&self) -> usize {
        let mut r = 0;
        let mut s = 1;
        for _ in &self.u_widths {
            r += 3 * s;
            s *= 2;
        }
        if self.bridge_width > 0 {
            r += 2 * s;
        }
        r
    }
}

/// Builds a freshly initialized model by registry name.
pub fn build_model(name: &str, config: CldNetConfig, seed: u64) -> Result<CldNet, ModelError> {
    match name {
        "cldnet" => CldNet::new(config, seed),
        other => Err(ModelError::UnknownArchitecture(other.into())),
    }
}

/// Restores a model saved with [`CldNet::to_checkpoint`].
pub fn model_from_checkpoint(ckpt: &CheckpointFile) -> Result<CldNet, ModelError> {
    match ckpt.header.model.as_str() {
        "cldnet" => CldNet::from_checkpoint(ckpt),
        other => Err(ModelError::UnknownArchitecture(other.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halo_covers_pyramid_reach() {
        let c = CldNetConfig::default();
        assert_eq!(c.receptive_radius(), 189);
        assert_eq!(c.required_halo(), 192);
        assert!(c.encoder_radius() < c.receptive_radius());
    }

    #[test]
    fn config_validation() {
        let mut c = CldNetConfig::default();
        assert!(c.validate().is_ok());
        c.aspp_dilations = [1, 6, 6, 18];
        assert!(c.validate().is_err());
        let c = CldNetConfig::default();
        assert!(matches!(
            c.check_input(80, 100, 96),
            Err(ModelError::Indivisible { pad_rows: 4, pad_cols: 0, .. })
        ));
        assert!(matches!(c.check_input(76, 96, 96), Err(ModelError::ChannelMismatch { .. })));
        assert!(matches!(build_model("segnet", c, 0), Err(ModelError::UnknownArchitecture(_))));
    }
}
