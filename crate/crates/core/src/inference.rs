//! Tiled prediction over scenes of any divisible size.
//!
//! The scene is cut into `tile`-sized cores; each core is predicted from a
//! window extended by `halo` pixels on every side (clipped at the scene
//! edge) and only the core is kept. With a halo of at least
//! [`CldNetConfig::required_halo`](crate::models::CldNetConfig::required_halo)
//! the convolutional path at every core pixel sees exactly what an untiled
//! pass sees. The pooled pyramid branch needs the whole scene's mean of the
//! coarsest features; [`ContextMode::Scene`] gathers it in a first pass over
//! the window cores with an order-independent sum, so stitched output equals
//! the untiled forward pass bit for bit.

use thiserror::Error;

use crate::autodiff::{argmax_classes, plane_sums, softmax_max_probability, ExactSum, Tensor, TensorError};
use crate::features::{solar_position, FeatureStack, StaticGrids};
use crate::grid_io::{Plane, SceneGrid};
use crate::models::{CldNet, ModelError};
use crate::training::{InputSpec, TrainError};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid tiling: {0}")]
    Config(String),
}

/// Source of the pooled branch's global mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    /// Mean over the whole scene, as in an untiled pass.
    Scene,
    /// Mean over each window, as when training on independent tiles.
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TiledOptions {
    pub tile: usize,
    pub halo: usize,
    pub context: ContextMode,
}

impl TiledOptions {
    /// Scene context with a halo, window context without one: halo 0 then
    /// reproduces training-style independent tiles.
    pub fn new(tile: usize, halo: usize) -> Self {
        Self {
            tile,
            halo,
            context: if halo == 0 { ContextMode::Window } else { ContextMode::Scene },
        }
    }
}

/// One network input window and the core it is responsible for, in scene
/// pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
    pub core_row: usize,
    pub core_col: usize,
    pub core_rows: usize,
    pub core_cols: usize,
}

impl Window {
    pub fn bounds(&self) -> (usize, usize, usize, usize) {
        (self.row, self.col, self.rows, self.cols)
    }
}

fn spans(n: usize, tile: usize, halo: usize) -> Vec<(usize, usize, usize, usize)> {
    (0..n)
        .step_by(tile)
        .map(|c0| {
            let c1 = (c0 + tile).min(n);
            let w0 = c0.saturating_sub(halo);
            let w1 = (c1 + halo).min(n);
            (w0, w1 - w0, c0, c1 - c0)
        })
        .collect()
}

/// Row-major window layout. `tile` and `halo` are rounded up to `multiple`
/// so every window edge stays on the pooling lattice.
pub fn plan_windows(
    rows: usize,
    cols: usize,
    tile: usize,
    halo: usize,
    multiple: usize,
) -> Result<Vec<Window>, InferenceError> {
    if tile == 0 {
        return Err(InferenceError::Config("tile must be positive".into()));
    }
    if rows % multiple != 0 || cols % multiple != 0 {
        return Err(ModelError::Indivisible {
            rows,
            cols,
            multiple,
            pad_rows: rows.next_multiple_of(multiple) - rows,
            pad_cols: cols.next_multiple_of(multiple) - cols,
        }
        .into());
    }
    let tile = tile.next_multiple_of(multiple);
    let halo = halo.next_multiple_of(multiple);
    let mut out = Vec::new();
    for (row, nrows, core_row, core_rows) in spans(rows, tile, halo) {
        for &(col, ncols, core_col, core_cols) in &spans(cols, tile, halo) {
            out.push(Window {
                row,
                col,
                rows: nrows,
                cols: ncols,
                core_row,
                core_col,
                core_rows,
                core_cols,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Plane<u8>,
    /// Softmax probability of the predicted class.
    pub max_probability: Plane<f32>,
    /// Distinct warnings raised by the network (dilation clamping).
    pub warnings: Vec<String>,
}

impl Prediction {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            labels: Plane::filled(rows, cols, 0),
            max_probability: Plane::filled(rows, cols, 0.0),
            warnings: Vec::new(),
        }
    }

    fn note(&mut self, warnings: Vec<String>) {
        for w in warnings {
            if !self.warnings.contains(&w) {
                self.warnings.push(w);
            }
        }
    }
}

pub fn stack_tensor(stack: FeatureStack) -> Tensor<f32> {
    let shape = [1, stack.channels(), stack.rows, stack.cols];
    Tensor::new(&shape, stack.data).expect("stack data matches its shape")
}

/// Untiled prediction of a `[1, c, h, w]` input.
pub fn predict_full(model: &CldNet, x: Tensor<f32>) -> Result<Prediction, InferenceError> {
    let [_, _, h, w] = x.dims4()?;
    let out = model.predict(x, None)?;
    let ld = [1, model.config().num_classes, h, w];
    let logits = out.logits.value().data();
    let mut p = Prediction::new(h, w);
    p.labels.data = argmax_classes(logits, ld);
    p.max_probability.data = softmax_max_probability(logits, ld);
    p.note(out.warnings);
    Ok(p)
}

/// Predicts a `rows × cols` scene window by window. `fetch` returns the
/// `[1, c, rows, cols]` network input for a window's bounds; it is called
/// twice per window under [`ContextMode::Scene`] when there is more than
/// one window.
pub fn predict_tiled<F>(
    model: &CldNet,
    rows: usize,
    cols: usize,
    opts: TiledOptions,
    mut fetch: F,
) -> Result<Prediction, InferenceError>
where
    F: FnMut(&Window) -> Result<Tensor<f32>, InferenceError>,
{
    let cfg = model.config();
    let m = cfg.size_multiple();
    let windows = plan_windows(rows, cols, opts.tile, opts.halo, m)?;
    let context = if opts.context == ContextMode::Scene && windows.len() > 1 {
        let mut sums = vec![ExactSum::default(); cfg.bottom_width()];
        for w in &windows {
            let bottom = model.encode(fetch(w)?)?;
            let bd = bottom.dims4()?;
            let r = (w.core_row - w.row) / m;
            let c = (w.core_col - w.col) / m;
            let part = plane_sums(bottom.data(), bd, r..r + w.core_rows / m, c..c + w.core_cols / m);
            for (s, p) in sums.iter_mut().zip(&part) {
                s.merge(p);
            }
        }
        let mean: Vec<f32> = sums.iter().map(|s| s.mean()).collect();
        Some(Tensor::new(&[1, mean.len(), 1, 1], mean)?)
    } else {
        None
    };
    let k = cfg.num_classes;
    let mut pred = Prediction::new(rows, cols);
    for w in &windows {
        let out = model.predict(fetch(w)?, context.as_ref())?;
        pred.note(out.warnings);
        let ld = [1, k, w.rows, w.cols];
        let logits = out.logits.value().data();
        let labels = argmax_classes(logits, ld);
        let probs = softmax_max_probability(logits, ld);
        let (dr, dc) = (w.core_row - w.row, w.core_col - w.col);
        for r in 0..w.core_rows {
            let src = (dr + r) * w.cols + dc;
            let dst = (w.core_row + r) * cols + w.core_col;
            pred.labels.data[dst..dst + w.core_cols].copy_from_slice(&labels[src..src + w.core_cols]);
            pred.max_probability.data[dst..dst + w.core_cols].copy_from_slice(&probs[src..src + w.core_cols]);
        }
    }
    Ok(pred)
}

/// Tiled prediction of a scene, computing features window by window.
pub fn predict_scene(
    model: &CldNet,
    spec: &InputSpec,
    scene: &SceneGrid,
    statics: Option<&StaticGrids>,
    opts: TiledOptions,
) -> Result<Prediction, InferenceError> {
    let expected = model.config().in_channels;
    if spec.channels() != expected {
        return Err(ModelError::ChannelMismatch {
            expected,
            found: spec.channels(),
        }
        .into());
    }
    let g = scene.geometry;
    predict_tiled(model, g.rows, g.cols, opts, |w| {
        Ok(stack_tensor(spec.prepare_window(scene, statics, w.bounds())?))
    })
}

/// Day/night decision for model selection: the scene's explicit flag, or
/// else whether the sun is below the horizon over most of a sampled
/// lattice of cells.
pub fn scene_is_night(scene: &SceneGrid) -> bool {
    if let Some(n) = scene.night {
        return n;
    }
    let g = scene.geometry;
    let step = (g.rows.max(g.cols) / 64).max(1);
    let (mut dark, mut total) = (0usize, 0usize);
    for r in (0..g.rows).step_by(step) {
        for c in (0..g.cols).step_by(step) {
            total += 1;
            dark += usize::from(solar_position(scene.timestamp, g.latitude(r), g.longitude(c)).zenith > 90.0);
        }
    }
    2 * dark > total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::CldNetConfig;

    #[test]
    fn windows_cover_scene_once() {
        let ws = plan_windows(200, 136, 64, 20, 8).unwrap();
        let mut hits = vec![0u8; 200 * 136];
        for w in &ws {
            assert_eq!(w.row % 8, 0);
            assert_eq!(w.rows % 8, 0);
            assert!(w.row <= w.core_row && w.core_row + w.core_rows <= w.row + w.rows);
            for r in w.core_row..w.core_row + w.core_rows {
                for c in w.core_col..w.core_col + w.core_cols {
                    hits[r * 136 + c] += 1;
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
        assert_eq!(ws.len(), 4 * 3);
        // Halo 20 rounds to 24.
        assert_eq!(ws[1].col, 64 - 24);
    }

    #[test]
    fn zero_halo_is_plain_tiling() {
        let ws = plan_windows(96, 96, 48, 0, 8).unwrap();
        assert_eq!(ws.len(), 4);
        assert!(ws.iter().all(|w| w.rows == 48 && w.row == w.core_row));
        assert_eq!(TiledOptions::new(48, 0).context, ContextMode::Window);
    }

    #[test]
    fn night_flag_wins_over_geometry() {
        use crate::grid_io::{synthetic_scene, SynthConfig};
        use chrono::TimeZone;
        let cfg = SynthConfig {
            rows: 16,
            cols: 16,
            // 04 UTC is local noon at 120° E.
            start: chrono::Utc.with_ymd_and_hms(2022, 6, 1, 4, 0, 0).unwrap(),
            ..SynthConfig::default()
        };
        let mut scene = synthetic_scene(&cfg, 1, 0).scene;
        scene.night = None;
        assert!(!scene_is_night(&scene));
        scene.timestamp = chrono::Utc.with_ymd_and_hms(2022, 6, 1, 16, 0, 0).unwrap();
        assert!(scene_is_night(&scene));
        scene.night = Some(false);
        assert!(!scene_is_night(&scene));
    }

    #[test]
    fn indivisible_scene_rejected() {
        assert!(plan_windows(100, 96, 48, 0, 8).is_err());
    }

    fn tiny() -> CldNetConfig {
        CldNetConfig {
            in_channels: 3,
            stem_width: 4,
            u_widths: vec![4, 8],
            bridge_width: 0,
            aspp_branch_width: 4,
            aspp_width: 4,
            aspp_dilations: [1, 2, 3, 4],
            fuse_width: 4,
            ..CldNetConfig::default()
        }
    }

    #[test]
    fn stitched_matches_untiled() {
        let cfg = tiny();
        let model = CldNet::new(cfg.clone(), 4).unwrap();
        let (h, w) = (64, 48);
        let x = crate::autodiff::gradcheck::random_tensor(&[1, 3, h, w], 9);
        let x = Tensor::new(x.shape(), x.data().iter().map(|&v| v as f32).collect()).unwrap();
        let full = predict_full(&model, x.clone()).unwrap();
        let halo = cfg.required_halo();
        let tiled = predict_tiled(&model, h, w, TiledOptions::new(16, halo), |win| {
            let mut data = Vec::new();
            for c in 0..3 {
                for r in win.row..win.row + win.rows {
                    let s = (c * h + r) * w + win.col;
                    data.extend_from_slice(&x.data()[s..s + win.cols]);
                }
            }
            Ok(Tensor::new(&[1, 3, win.rows, win.cols], data)?)
        })
        .unwrap();
        assert_eq!(tiled.labels, full.labels);
        assert_eq!(
            tiled.max_probability.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            full.max_probability.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
