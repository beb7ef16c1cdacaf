use super::{ChannelSource, FeatureError, FeatureStack};
use crate::grid_io::{BandId, NormalizedScene, BAND_COUNT};

/// 16 bands + C(6,2) albedo differences + C(10,2) brightness-temperature differences.
pub const BASE_CHANNELS: usize = 76;

/// Fixed channel ordering of the knowledge module.
///
/// Indices 0-15 are B01..B16, 16-30 the albedo pairs (i, j) with
/// 1 <= i < j <= 6 and 31-75 the brightness-temperature pairs with
/// 7 <= i < j <= 16, both in lexicographic order.
pub fn base_layout() -> Vec<ChannelSource> {
    let mut layout: Vec<ChannelSource> = BandId::all().map(ChannelSource::Band).collect();
    for group in [1u8..=6, 7u8..=16] {
        let bands: Vec<u8> = group.collect();
        for (k, &i) in bands.iter().enumerate() {
            for &j in &bands[k + 1..] {
                layout.push(ChannelSource::Difference(BandId::new(i), BandId::new(j)));
            }
        }
    }
    debug_assert_eq!(layout.len(), BASE_CHANNELS);
    layout
}

/// Builds the 76-channel stack from normalized band planes.
pub fn build_feature_stack(scene: &NormalizedScene) -> Result<FeatureStack, FeatureError> {
    let n = scene.rows * scene.cols;
    if scene.planes.len() != BAND_COUNT {
        return Err(FeatureError::Shape(format!(
            "expected {BAND_COUNT} planes, got {}",
            scene.planes.len()
        )));
    }
    if let Some(b) = scene.planes.iter().position(|p| p.len() != n) {
        return Err(FeatureError::Shape(format!(
            "plane {} has {} cells, expected {n}",
            BandId::from_index(b),
            scene.planes[b].len()
        )));
    }
    let layout = base_layout();
    let mut data = Vec::with_capacity(layout.len() * n);
    for src in &layout {
        match *src {
            ChannelSource::Band(b) => data.extend_from_slice(&scene.planes[b.index()]),
            ChannelSource::Difference(a, b) => {
                let (pa, pb) = (&scene.planes[a.index()], &scene.planes[b.index()]);
                data.extend(pa.iter().zip(pb).map(|(x, y)| x - y));
            }
            ChannelSource::Aux(_) => unreachable!("base layout has no auxiliary channels"),
        }
    }
    Ok(FeatureStack {
        rows: scene.rows,
        cols: scene.cols,
        data,
        layout,
    })
}
