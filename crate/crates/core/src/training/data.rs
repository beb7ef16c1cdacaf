use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mode, TrainError};
use crate::autodiff::Tensor;
use crate::features::{
    apply_mask, auxiliary_window, AuxField, build_feature_stack, concat_aux, AuxSelection, FeatureStack, MaskConfig,
    StaticGrids, BASE_CHANNELS, HIMAWARI_SUB_LONGITUDE,
};
use crate::grid_io::{
    himawari_specs, load_plane, normalize_scene, BandId, CloudLabelGrid, DatasetManifest, ManifestEntry,
    SceneGrid, SplitTag,
};

/// How a scene becomes network input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub aux: AuxSelection,
    pub mask: MaskConfig,
    pub sub_longitude: f64,
}

impl InputSpec {
    /// Mode defaults: no auxiliaries for `Base`, the four viewing angles for
    /// `CldNetW`, and the angles with VIS/NIR masked for `CldNetO`.
    pub fn for_mode(mode: Mode) -> Self {
        let (aux, mask) = match mode {
            Mode::Base => (AuxSelection::none(), MaskConfig::default()),
            Mode::CldNetW => (AuxSelection::viewing_angles(), MaskConfig::default()),
            Mode::CldNetO => (AuxSelection::viewing_angles(), MaskConfig::vis_nir()),
        };
        Self {
            aux,
            mask,
            sub_longitude: HIMAWARI_SUB_LONGITUDE,
        }
    }

    pub fn channels(&self) -> usize {
        BASE_CHANNELS + self.aux.count()
    }

    /// Normalizes, reorganizes, masks and extends one scene.
    pub fn prepare(&self, scene: &SceneGrid, statics: Option<&StaticGrids>) -> Result<FeatureStack, TrainError> {
        let g = scene.geometry;
        self.prepare_window(scene, statics, (0, 0, g.rows, g.cols))
    }

    /// [`InputSpec::prepare`] restricted to a `(row, col, rows, cols)`
    /// window; every value equals the same cell of the full stack.
    pub fn prepare_window(
        &self,
        scene: &SceneGrid,
        statics: Option<&StaticGrids>,
        window: (usize, usize, usize, usize),
    ) -> Result<FeatureStack, TrainError> {
        let (r0, c0, rows, cols) = window;
        let g = scene.geometry;
        if r0 + rows > g.rows || c0 + cols > g.cols {
            return Err(TrainError::Data(format!(
                "window {rows}x{cols} at ({r0}, {c0}) exceeds the {}x{} scene",
                g.rows, g.cols
            )));
        }
        let needs_statics = self.aux.contains(AuxField::Altitude) || self.aux.contains(AuxField::LandWater);
        if needs_statics && statics.is_none() {
            return Err(TrainError::Data(
                "altitude/land-water channels requested but no static grids were found".into(),
            ));
        }
        let full = (r0, c0, rows, cols) == (0, 0, g.rows, g.cols);
        let cropped;
        let part = if full {
            scene
        } else {
            cropped = scene.crop(r0, c0, rows, cols);
            &cropped
        };
        part.validate()?;
        let norm = normalize_scene(part, &himawari_specs())?;
        let stack = apply_mask(build_feature_stack(&norm)?, &self.mask)?;
        if self.aux.count() == 0 {
            return Ok(stack);
        }
        let aux = auxiliary_window(&g, scene.timestamp, statics, self.sub_longitude, window)?;
        Ok(concat_aux(stack, &aux, &self.aux)?)
    }

    pub fn to_metadata(&self, meta: &mut BTreeMap<String, String>) {
        meta.insert("aux".into(), self.aux.to_string());
        let bands: Vec<String> = self.mask.mask_bands.iter().map(|b| b.to_string()).collect();
        meta.insert("mask_bands".into(), bands.join(","));
        meta.insert("mask_ratio".into(), self.mask.mask_ratio.to_string());
        meta.insert("sub_longitude".into(), self.sub_longitude.to_string());
    }

    pub fn from_metadata(meta: &BTreeMap<String, String>) -> Result<Self, TrainError> {
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| TrainError::Checkpoint(format!("metadata lacks {k}")))
        };
        let bad = |k: &str| TrainError::Checkpoint(format!("metadata field {k} is malformed"));
        let aux: AuxSelection = get("aux")?.parse().map_err(|_| bad("aux"))?;
        let bands = get("mask_bands")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<BandId>().map_err(|_| bad("mask_bands")))
            .collect::<Result<Vec<_>, _>>()?;
        let ratio: f64 = get("mask_ratio")?.parse().map_err(|_| bad("mask_ratio"))?;
        let sub_longitude: f64 = get("sub_longitude")?.parse().map_err(|_| bad("sub_longitude"))?;
        Ok(Self {
            aux,
            mask: MaskConfig::new(bands, ratio),
            sub_longitude,
        })
    }
}

/// Altitude and land/water planes stored next to a manifest, if present.
pub fn load_statics(dir: &Path) -> Result<Option<StaticGrids>, TrainError> {
    let (alt, land) = (dir.join("altitude.raster"), dir.join("land_water.raster"));
    if !alt.exists() || !land.exists() {
        return Ok(None);
    }
    Ok(Some(StaticGrids {
        altitude: load_plane(&alt)?.1,
        land_water: load_plane(&land)?.1,
    }))
}

/// Non-overlapping square tiles of one scene, stacked along the batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBatch {
    /// `[tiles, channels, tile, tile]`, row-major tile order.
    pub input: Tensor<f32>,
    /// Per-pixel class codes in the same layout as one input channel.
    pub targets: Vec<u8>,
    pub tile_rows: usize,
    pub tile_cols: usize,
    pub tile: usize,
}

fn indivisible(rows: usize, cols: usize, tile: usize) -> TrainError {
    TrainError::Indivisible {
        rows,
        cols,
        tile,
        pad_rows: rows.next_multiple_of(tile) - rows,
        pad_cols: cols.next_multiple_of(tile) - cols,
    }
}

pub fn tile_scene(stack: &FeatureStack, labels: &CloudLabelGrid, tile: usize) -> Result<TileBatch, TrainError> {
    let (rows, cols) = (stack.rows, stack.cols);
    if labels.geometry.rows != rows || labels.geometry.cols != cols {
        return Err(TrainError::Data(format!(
            "labels {}×{} do not match scene {rows}×{cols}",
            labels.geometry.rows, labels.geometry.cols
        )));
    }
    if tile == 0 || rows % tile != 0 || cols % tile != 0 {
        return Err(indivisible(rows, cols, tile.max(1)));
    }
    let (tr, tc) = (rows / tile, cols / tile);
    let c = stack.channels();
    let mut data = Vec::with_capacity(stack.data.len());
    let mut targets = Vec::with_capacity(rows * cols);
    let codes = labels.codes();
    for ty in 0..tr {
        for tx in 0..tc {
            for ch in 0..c {
                let plane = stack.channel(ch);
                for r in ty * tile..(ty + 1) * tile {
                    data.extend_from_slice(&plane[r * cols + tx * tile..][..tile]);
                }
            }
            for r in ty * tile..(ty + 1) * tile {
                targets.extend_from_slice(&codes[r * cols + tx * tile..][..tile]);
            }
        }
    }
    Ok(TileBatch {
        input: Tensor::new(&[tr * tc, c, tile, tile], data)?,
        targets,
        tile_rows: tr,
        tile_cols: tc,
        tile,
    })
}

/// Reassembles `[tile_rows·tile_cols, c, t, t]` into channel planes of the full scene.
pub fn untile(tiles: &Tensor<f32>, tile_rows: usize, tile_cols: usize) -> Result<Tensor<f32>, TrainError> {
    let [b, c, t, t2] = tiles.dims4()?;
    if t != t2 || b != tile_rows * tile_cols {
        return Err(TrainError::Data(format!(
            "cannot untile {:?} into {tile_rows}×{tile_cols}",
            tiles.shape()
        )));
    }
    let (rows, cols) = (tile_rows * t, tile_cols * t);
    let mut out = vec![0.0f32; c * rows * cols];
    let src = tiles.data();
    for i in 0..b {
        let (ty, tx) = (i / tile_cols, i % tile_cols);
        for ch in 0..c {
            for r in 0..t {
                let from = ((i * c + ch) * t + r) * t;
                let to = (ch * rows + ty * t + r) * cols + tx * t;
                out[to..to + t].copy_from_slice(&src[from..from + t]);
            }
        }
    }
    Ok(Tensor::new(&[1, c, rows, cols], out)?)
}

/// Seeded shuffle of the non-test entries into `k` near-equal folds.
pub fn split_into(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<Vec<Vec<ManifestEntry>>, TrainError> {
    let mut pool: Vec<ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| e.split != SplitTag::Test)
        .cloned()
        .collect();
    if k == 0 || pool.len() < k {
        return Err(TrainError::Data(format!(
            "{} training scenes cannot form {k} folds",
            pool.len()
        )));
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = pool.len();
    Ok((0..k).map(|i| pool[i * n / k..(i + 1) * n / k].to_vec()).collect())
}

/// Five folds; by convention fold 0 validates and the rest train.
pub fn split_dataset(manifest: &DatasetManifest, seed: u64) -> Result<Vec<Vec<ManifestEntry>>, TrainError> {
    split_into(manifest, 5, seed)
}
