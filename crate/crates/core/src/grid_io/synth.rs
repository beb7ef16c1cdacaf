//! Seeded synthetic scenes with class-conditioned band values.
//!
//! Class regions are Voronoi cells around random sites. Every class sits at
//! its own level in every band (levels are a per-band permutation of ten
//! evenly spaced values inside the band's range), and Gaussian noise is
//! added on top. A diagonal "night" wedge of unlabeled cells can be cut
//! out of each scene.

use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    himawari_specs, io_err, write_labels, write_plane, write_scene, CloudLabelGrid,
    DatasetManifest, GridError, GridGeometry, ManifestEntry, Plane, SceneGrid, SplitTag,
    CLASS_COUNT, UNLABELED,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Fraction of cells cut out as unlabeled night.
    pub night_fraction: f64,
    /// Noise standard deviation as a fraction of each band's range.
    pub noise_sigma: f64,
    /// Number of Voronoi sites per scene.
    pub regions: usize,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub cell: f64,
    pub start: DateTime<Utc>,
    pub step: Duration,
    pub missing_value: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 96,
            cols: 96,
            train_scenes: 8,
            test_scenes: 2,
            night_fraction: 0.0,
            noise_sigma: 0.02,
            regions: 24,
            origin_lat: 40.0,
            origin_lon: 120.0,
            cell: 0.05,
            start: Utc.with_ymd_and_hms(2022, 6, 1, 3, 0, 0).unwrap(),
            step: Duration::hours(1),
            missing_value: -999.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.rows < 32 || self.cols < 32 {
            return Err(GridError::InvalidConfig(format!(
                "synthetic scenes need at least 32x32 cells, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(0.0..=1.0).contains(&self.night_fraction) {
            return Err(GridError::InvalidConfig("night_fraction must lie in [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0) || self.regions == 0 {
            return Err(GridError::InvalidConfig("noise_sigma >= 0 and regions > 0 required".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(self.origin_lat, self.origin_lon, self.cell, self.rows, self.cols)
    }
}

/// Normalized level of `class` in `band`, in [0.1, 0.82].
pub(crate) fn class_level(class: usize, band: usize) -> f64 {
    0.1 + 0.08 * ((3 * class + band) % CLASS_COUNT) as f64
}

pub struct SyntheticSample {
    pub scene: SceneGrid,
    pub labels: CloudLabelGrid,
}

fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One synthetic scene; a pure function of (`cfg`, `seed`, `index`).
pub fn synthetic_scene(cfg: &SynthConfig, seed: u64, index: usize) -> SyntheticSample {
    let mut rng = scene_rng(seed, index);
    let (rows, cols) = (cfg.rows, cfg.cols);
    let geometry = cfg.geometry();

    let sites: Vec<(f64, f64, u8)> = (0..cfg.regions)
        .map(|i| {
            // cycle through the classes so every scene contains all of them
            let class = if i < CLASS_COUNT {
                i as u8
            } else {
                rng.gen_range(0..CLASS_COUNT) as u8
            };
            (rng.gen_range(0.0..rows as f64), rng.gen_range(0.0..cols as f64), class)
        })
        .collect();
    let mut classes = vec![0u8; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let nearest = sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - y).powi(2) + (a.1 - x).powi(2);
                    let db = (b.0 - y).powi(2) + (b.1 - x).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least one site");
            classes[r * cols + c] = nearest.2;
        }
    }

    let night = night_mask(rows, cols, cfg.night_fraction);
    let specs = himawari_specs();
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let planes: Vec<Plane<f32>> = specs
        .iter()
        .enumerate()
        .map(|(b, spec)| {
            let span = spec.range_max - spec.range_min;
            let data = (0..rows * cols)
                .map(|i| {
                    let eps = if cfg.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    let level = if night[i] && b < 6 {
                        // no reflected sunlight
                        0.005
                    } else {
                        class_level(classes[i] as usize, b)
                    };
                    (spec.range_min + span * (level + eps)) as f32
                })
                .collect();
            Plane::from_vec(rows, cols, data)
        })
        .collect();

    let labels: Vec<u8> = classes
        .iter()
        .zip(&night)
        .map(|(&c, &n)| if n { UNLABELED } else { c })
        .collect();
    SyntheticSample {
        scene: SceneGrid {
            timestamp: cfg.start + cfg.step * index as i32,
            geometry,
            planes,
            missing_value: cfg.missing_value,
            night: Some(cfg.night_fraction > 0.5),
        },
        labels: CloudLabelGrid {
            geometry,
            labels: Plane::from_vec(rows, cols, labels),
        },
    }
}

/// Marks the `round(fraction * cells)` cells furthest along a diagonal
/// terminator (east and south first).
fn night_mask(rows: usize, cols: usize, fraction: f64) -> Vec<bool> {
    let total = rows * cols;
    let count = (fraction * total as f64).round() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    let score = |i: usize| (i % cols) as f64 / cols as f64 + 0.25 * (i / cols) as f64 / rows as f64;
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    let mut mask = vec![false; total];
    for &i in &order[..count] {
        mask[i] = true;
    }
    mask
}

/// Writes scenes, labels, static altitude/land-water planes and a manifest
/// into `out_dir`.
pub fn generate_synthetic_dataset(
    cfg: &SynthConfig,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest, GridError> {
    cfg.validate()?;
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut entries = Vec::new();
    let n = cfg.train_scenes + cfg.test_scenes;
    for i in 0..n {
        let sample = synthetic_scene(cfg, seed, i);
        let scene_path = out.join(format!("scene_{i:03}.raster"));
        let label_path = out.join(format!("labels_{i:03}.raster"));
        write_scene(&scene_path, &sample.scene)?;
        write_labels(&label_path, &sample.labels)?;
        entries.push(ManifestEntry {
            scene: scene_path,
            labels: label_path,
            timestamp: sample.scene.timestamp,
            split: if i < cfg.train_scenes { SplitTag::Train } else { SplitTag::Test },
        });
    }
    let (altitude, land) = static_planes(cfg);
    write_plane(out.join("altitude.raster"), cfg.geometry(), "altitude", &altitude, None)?;
    write_plane(out.join("land_water.raster"), cfg.geometry(), "land_water", &land, None)?;
    let manifest = DatasetManifest::new(entries)?;
    manifest.save(out.join("manifest.csv"))?;
    Ok(manifest)
}

/// Smooth terrain: a single ridge, sea below zero altitude.
fn static_planes(cfg: &SynthConfig) -> (Plane<f32>, Plane<f32>) {
    let (rows, cols) = (cfg.rows, cfg.cols);
    let mut alt = Plane::filled(rows, cols, 0.0f32);
    let mut land = Plane::filled(rows, cols, 0.0f32);
    for r in 0..rows {
        for c in 0..cols {
            let x = c as f64 / cols as f64;
            let y = r as f64 / rows as f64;
            let h = 3000.0 * (-(((x - 0.6).powi(2) + (y - 0.4).powi(2)) / 0.05)).exp() - 200.0;
            alt.set(r, c, h.max(0.0) as f32);
            land.set(r, c, if h > 0.0 { 1.0 } else { 0.0 });
        }
    }
    (alt, land)
}
