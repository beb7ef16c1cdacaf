//! Gridded scenes, label grids and their on-disk formats.
//!
//! A scene holds the sixteen Himawari bands on a regular lat/lon raster in
//! physical units (albedo % for B01-B06, brightness temperature K for
//! B07-B16). Label grids carry one class code per cell.

mod channels;
mod labels;
mod manifest;
mod raster;
mod stats;
mod synth;

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use channels::{himawari_specs, validate_specs, BandId, ChannelKind, ChannelSpec, BAND_COUNT};
pub use labels::{CloudClass, CloudLabelGrid, CLASS_COUNT, UNLABELED};
pub use manifest::{DatasetManifest, ManifestEntry, SplitTag};
pub use raster::{
    load_labels, load_plane, load_scene, write_labels, write_plane, write_scene, RasterHeader,
    RasterKind,
};
pub use stats::{compute_band_statistics, BandHistogram, BandStatistics, COVERAGE};
pub use synth::{generate_synthetic_dataset, synthetic_scene, SynthConfig, SyntheticSample};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("band count {found} \u{2260} {expected}")]
    BandCount { found: usize, expected: usize },
    #[error("plane size mismatch in band {band}: expected {expected} bytes, found {found}")]
    PlaneSize {
        band: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in band {band} at cell {index}")]
    NonFinite { band: String, index: usize },
    #[error("invalid class code {code} at cell {index}")]
    InvalidLabel { index: usize, code: u8 },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("band {band}: every value is missing")]
    AllMissing { band: String },
    #[error("invalid channel specs: {0}")]
    InvalidSpecs(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> GridError {
    let path = path.into();
    move |source| GridError::Io { path, source }
}

/// Regular lat/lon raster layout.
///
/// `origin_lat`/`origin_lon` locate the centre of the north-west cell; rows
/// run north to south and columns west to east.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell_lat: f64,
    pub cell_lon: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridGeometry {
    pub fn new(origin_lat: f64, origin_lon: f64, cell: f64, rows: usize, cols: usize) -> Self {
        Self {
            origin_lat,
            origin_lon,
            cell_lat: cell,
            cell_lon: cell,
            rows,
            cols,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn latitude(&self, row: usize) -> f64 {
        self.origin_lat - row as f64 * self.cell_lat
    }

    pub fn longitude(&self, col: usize) -> f64 {
        self.origin_lon + col as f64 * self.cell_lon
    }

    /// (north, west, south, east) edges of the covered area in degrees.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let north = self.origin_lat + self.cell_lat / 2.0;
        let west = self.origin_lon - self.cell_lon / 2.0;
        (
            north,
            west,
            north - self.rows as f64 * self.cell_lat,
            west + self.cols as f64 * self.cell_lon,
        )
    }

    /// Sub-grid starting at (`row`, `col`).
    pub fn window(&self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        Self {
            origin_lat: self.latitude(row),
            origin_lon: self.longitude(col),
            rows,
            cols,
            ..*self
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn check_matches(&self, other: &Self) -> Result<(), GridError> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        if !self.same_shape(other)
            || !close(self.origin_lat, other.origin_lat)
            || !close(self.origin_lon, other.origin_lon)
            || !close(self.cell_lat, other.cell_lat)
            || !close(self.cell_lon, other.cell_lon)
        {
            return Err(GridError::GeometryMismatch(format!(
                "{}x{} grid at ({}, {}) vs {}x{} grid at ({}, {})",
                self.rows,
                self.cols,
                self.origin_lat,
                self.origin_lon,
                other.rows,
                other.cols,
                other.origin_lat,
                other.origin_lon
            )));
        }
        Ok(())
    }
}

/// Row-major two-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "plane data length");
        Self { rows, cols, data }
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.cols + col] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Copies the `rows`×`cols` window starting at (`row`, `col`).
    pub fn crop(&self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in row..row + rows {
            let start = r * self.cols + col;
            data.extend_from_slice(&self.data[start..start + cols]);
        }
        Self { rows, cols, data }
    }
}

/// One timestamped sixteen-band scene in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrid {
    pub timestamp: DateTime<Utc>,
    pub geometry: GridGeometry,
    pub planes: Vec<Plane<f32>>,
    pub missing_value: f32,
    /// Explicit day/night flag; `None` defers to solar geometry.
    pub night: Option<bool>,
}

impl SceneGrid {
    /// Checks band count, plane shapes and finiteness.
    pub fn validate(&self) -> Result<(), GridError> {
        if self.planes.len() != BAND_COUNT {
            return Err(GridError::BandCount {
                found: self.planes.len(),
                expected: BAND_COUNT,
            });
        }
        if !self.missing_value.is_finite() {
            return Err(GridError::MalformedHeader(
                "missing_value must be finite".into(),
            ));
        }
        for (b, plane) in self.planes.iter().enumerate() {
            let band = BandId::from_index(b).to_string();
            if plane.rows != self.geometry.rows || plane.cols != self.geometry.cols {
                return Err(GridError::PlaneSize {
                    band,
                    expected: self.geometry.len() * 4,
                    found: plane.len() * 4,
                });
            }
            if let Some(index) = plane
                .data
                .iter()
                .position(|v| !v.is_finite() && *v != self.missing_value)
            {
                return Err(GridError::NonFinite { band, index });
            }
        }
        Ok(())
    }

    pub fn plane(&self, band: BandId) -> &Plane<f32> {
        &self.planes[band.index()]
    }

    pub fn is_missing(&self, v: f32) -> bool {
        v == self.missing_value
    }

    /// Copies a spatial window of every band.
    pub fn crop(&self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        Self {
            timestamp: self.timestamp,
            geometry: self.geometry.window(row, col, rows, cols),
            planes: self
                .planes
                .iter()
                .map(|p| p.crop(row, col, rows, cols))
                .collect(),
            missing_value: self.missing_value,
            night: self.night,
        }
    }
}

/// Scene values mapped to [0, 1] plus a per-band validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedScene {
    pub rows: usize,
    pub cols: usize,
    pub planes: Vec<Vec<f32>>,
    pub valid: Vec<Vec<bool>>,
}

/// Maps each band to [0, 1] with its channel range; missing cells become 0.
pub fn normalize_scene(scene: &SceneGrid, specs: &[ChannelSpec]) -> Result<NormalizedScene, GridError> {
    validate_specs(specs)?;
    let mut planes = Vec::with_capacity(BAND_COUNT);
    let mut valid = Vec::with_capacity(BAND_COUNT);
    for (plane, spec) in scene.planes.iter().zip(specs) {
        let scale = 1.0 / (spec.range_max - spec.range_min);
        let mut values = Vec::with_capacity(plane.len());
        let mut mask = Vec::with_capacity(plane.len());
        for &v in &plane.data {
            if scene.is_missing(v) {
                values.push(0.0);
                mask.push(false);
            } else {
                let x = ((v as f64 - spec.range_min) * scale).clamp(0.0, 1.0);
                values.push(x as f32);
                mask.push(true);
            }
        }
        planes.push(values);
        valid.push(mask);
    }
    Ok(NormalizedScene {
        rows: scene.geometry.rows,
        cols: scene.geometry.cols,
        planes,
        valid,
    })
}
