//! Per-band histograms and data-driven value ranges.

use super::{BandId, GridError, SceneGrid, BAND_COUNT};

/// Fraction of samples a derived range must cover.
pub const COVERAGE: f64 = 0.999;

/// Derived ranges are widened outward to multiples of this step.
pub const ROUNDING_STEP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct BandHistogram {
    pub band: BandId,
    /// `bins + 1` edges in physical units.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Cumulative percentage at the upper edge of each bin; ends at 100.
    pub cumulative_pct: Vec<f64>,
    pub samples: u64,
    pub observed: (f64, f64),
    /// Central range before rounding.
    pub raw_range: (f64, f64),
    /// Central range after outward rounding.
    pub range: (f64, f64),
    /// Fraction of samples inside `range`, by direct count.
    pub coverage: f64,
    /// The samples were (nearly) constant.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandStatistics {
    pub bands: Vec<BandHistogram>,
}

/// Histogram, cumulative curve and covering range for every band.
pub fn compute_band_statistics(scenes: &[SceneGrid], bins: usize) -> Result<BandStatistics, GridError> {
    if scenes.is_empty() {
        return Err(GridError::InvalidConfig("no scenes for band statistics".into()));
    }
    if bins < 2 {
        return Err(GridError::InvalidConfig(format!("bins must be at least 2, got {bins}")));
    }
    let mut bands = Vec::with_capacity(BAND_COUNT);
    for band in BandId::all() {
        let mut values: Vec<f64> = scenes
            .iter()
            .flat_map(|s| {
                s.plane(band)
                    .data
                    .iter()
                    .filter(move |v| !s.is_missing(**v))
                    .map(|&v| v as f64)
            })
            .collect();
        if values.is_empty() {
            return Err(GridError::AllMissing {
                band: band.to_string(),
            });
        }
        values.sort_by(f64::total_cmp);
        bands.push(histogram(band, &values, bins));
    }
    Ok(BandStatistics { bands })
}

fn histogram(band: BandId, sorted: &[f64], bins: usize) -> BandHistogram {
    let n = sorted.len();
    let observed = (sorted[0], sorted[n - 1]);
    let (lo, hi) = if observed.0 < observed.1 {
        observed
    } else {
        (observed.0 - 0.5, observed.1 + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0u64; bins];
    for &v in sorted {
        let i = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    let mut running = 0u64;
    let cumulative_pct = counts
        .iter()
        .map(|&c| {
            running += c;
            100.0 * running as f64 / n as f64
        })
        .collect();

    let raw_range = central_range(sorted);
    let range = round_outward(raw_range);
    let inside = sorted
        .iter()
        .filter(|&&v| v >= range.0 && v <= range.1)
        .count();
    BandHistogram {
        band,
        edges,
        counts,
        cumulative_pct,
        samples: n as u64,
        observed,
        raw_range,
        range,
        coverage: inside as f64 / n as f64,
        degenerate: raw_range.1 - raw_range.0 < ROUNDING_STEP,
    }
}

/// Tightest range that drops at most `1 - COVERAGE` of the samples, split
/// evenly between the two tails. An odd leftover sample is dropped from
/// whichever tail shortens the range more.
pub(crate) fn central_range(sorted: &[f64]) -> (f64, f64) {
    let n = sorted.len();
    let keep = (n * 999).div_ceil(1000);
    let drop = n - keep;
    let half = drop / 2;
    let (mut lo, mut hi) = (half, n - 1 - half);
    if drop % 2 == 1 {
        let drop_low = sorted[hi] - sorted[lo + 1];
        let drop_high = sorted[hi - 1] - sorted[lo];
        if drop_low < drop_high {
            lo += 1;
        } else {
            hi -= 1;
        }
    }
    (sorted[lo], sorted[hi])
}

/// Widens to multiples of the rounding step; an empty result gains one step.
pub(crate) fn round_outward((lo, hi): (f64, f64)) -> (f64, f64) {
    let lo_r = (lo / ROUNDING_STEP).floor() * ROUNDING_STEP;
    let mut hi_r = (hi / ROUNDING_STEP).ceil() * ROUNDING_STEP;
    if hi_r <= lo_r {
        hi_r = lo_r + ROUNDING_STEP;
    }
    (lo_r, hi_r)
}
