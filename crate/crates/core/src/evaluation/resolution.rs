use super::confusion::{confusion, metrics, MetricsReport};
use super::EvalError;
use crate::grid_io::{CloudLabelGrid, GridGeometry, Plane};

/// Both comparison directions for a fine prediction against a coarse reference.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossResolutionReport {
    /// Reference upsampled to the prediction grid.
    pub low2high: MetricsReport,
    /// Prediction downsampled to the reference grid.
    pub high2low: MetricsReport,
}

/// Index of the source cell whose span contains the centre of target cell
/// `i`; `scale` is source cells per target cell.
fn source_index(i: usize, scale: f64, n: usize) -> usize {
    // The epsilon keeps centres that land exactly on a boundary from
    // flipping with rounding noise in `scale`.
    (((i as f64 + 0.5) * scale + 1e-9).floor() as usize).min(n - 1)
}

/// Nearest-neighbour resampling of `src` onto `target`, which must cover
/// the same extent.
pub fn resample_nearest(src: &CloudLabelGrid, target: GridGeometry) -> Result<CloudLabelGrid, EvalError> {
    check_extent(&src.geometry, &target)?;
    let g = src.geometry;
    let sr = target.cell_lat / g.cell_lat;
    let sc = target.cell_lon / g.cell_lon;
    let cols: Vec<usize> = (0..target.cols).map(|c| source_index(c, sc, g.cols)).collect();
    let mut out = Plane::filled(target.rows, target.cols, 0u8);
    for r in 0..target.rows {
        let rr = source_index(r, sr, g.rows);
        for (c, &cc) in cols.iter().enumerate() {
            out.set(r, c, src.labels.get(rr, cc));
        }
    }
    Ok(CloudLabelGrid {
        geometry: target,
        labels: out,
    })
}

fn check_extent(a: &GridGeometry, b: &GridGeometry) -> Result<(), EvalError> {
    let (an, aw, as_, ae) = a.extent();
    let (bn, bw, bs, be) = b.extent();
    let tol_lat = 0.5 * a.cell_lat.min(b.cell_lat);
    let tol_lon = 0.5 * a.cell_lon.min(b.cell_lon);
    if (an - bn).abs() > tol_lat || (as_ - bs).abs() > tol_lat || (aw - bw).abs() > tol_lon || (ae - be).abs() > tol_lon
    {
        return Err(EvalError::GeometryMismatch(format!(
            "extents differ: ({an}, {aw}, {as_}, {ae}) vs ({bn}, {bw}, {bs}, {be})"
        )));
    }
    Ok(())
}

pub fn cross_resolution_compare(
    pred_hi: &CloudLabelGrid,
    ref_lo: &CloudLabelGrid,
) -> Result<CrossResolutionReport, EvalError> {
    let ref_up = resample_nearest(ref_lo, pred_hi.geometry)?;
    let pred_down = resample_nearest(pred_hi, ref_lo.geometry)?;
    Ok(CrossResolutionReport {
        low2high: metrics(&confusion(pred_hi, &ref_up)?),
        high2low: metrics(&confusion(&pred_down, ref_lo)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_io::UNLABELED;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geo(cell: f64, n: usize) -> GridGeometry {
        // North-west corner fixed at (40, 120).
        GridGeometry::new(40.0 - cell / 2.0, 120.0 + cell / 2.0, cell, n, n)
    }

    fn grid(cell: f64, n: usize, f: impl Fn(usize, usize) -> u8) -> CloudLabelGrid {
        let labels = (0..n * n).map(|i| f(i / n, i % n)).collect();
        CloudLabelGrid::new(geo(cell, n), labels).unwrap()
    }

    #[test]
    fn equal_resolution_is_identity() {
        let g = grid(0.05, 10, |r, c| ((r * 7 + c * 3) % 10) as u8);
        let rep = cross_resolution_compare(&g, &g).unwrap();
        assert_eq!(rep.low2high.accuracy, 1.0);
        assert_eq!(rep.low2high, rep.high2low);
    }

    #[test]
    fn checkerboard_at_two_and_a_half() {
        // 5×5 fine cells at 0.02° over the same 0.1° square as 2×2 at 0.05°.
        let fine = grid(0.02, 5, |r, c| ((r + c) % 2) as u8);
        // Coarse centres fall on fine indices 1 and 3, both odd: fine(1,1),
        // fine(1,3), fine(3,1), fine(3,3) are all class 0.
        let down = resample_nearest(&fine, geo(0.05, 2)).unwrap();
        assert_eq!(down.codes(), &[0, 0, 0, 0]);
        // Fine centres 0.5, 1.5 map to coarse 0 and 2.5, 3.5, 4.5 to coarse 1.
        let coarse = grid(0.05, 2, |r, c| (r * 2 + c) as u8);
        let up = resample_nearest(&coarse, geo(0.02, 5)).unwrap();
        let expected: Vec<u8> = (0..25)
            .map(|i| {
                let m = |k: usize| usize::from(k >= 2);
                (m(i / 5) * 2 + m(i % 5)) as u8
            })
            .collect();
        assert_eq!(up.codes(), &expected[..]);
        let rep = cross_resolution_compare(&fine, &grid(0.05, 2, |_, _| 0)).unwrap();
        // Low2High: 13 zeros of 25 in the checkerboard; High2Low: all 4 hit.
        assert!((rep.low2high.accuracy - 13.0 / 25.0).abs() < 1e-15);
        assert_eq!(rep.high2low.accuracy, 1.0);
    }

    #[test]
    fn blurred_boundaries_favour_high2low() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 12;
        let coarse_labels: Vec<u8> = (0..n * n).map(|_| rng.gen_range(0..10)).collect();
        let coarse = CloudLabelGrid::new(geo(0.1, n), coarse_labels).unwrap();
        let truth = resample_nearest(&coarse, geo(0.02, 5 * n)).unwrap();
        // Degrade the fine prediction wherever a neighbour differs.
        let m = 5 * n;
        let mut pred = truth.clone();
        for r in 0..m {
            for c in 0..m {
                let v = truth.labels.get(r, c);
                let edge = [(0i64, 1i64), (1, 0), (0, -1), (-1, 0)].iter().any(|&(dr, dc)| {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    (0..m as i64).contains(&rr)
                        && (0..m as i64).contains(&cc)
                        && truth.labels.get(rr as usize, cc as usize) != v
                });
                if edge {
                    pred.labels.set(r, c, (v + 1) % 10);
                }
            }
        }
        let rep = cross_resolution_compare(&pred, &coarse).unwrap();
        assert!(rep.high2low.accuracy >= rep.low2high.accuracy);
        assert!(rep.low2high.accuracy < 1.0);
    }

    #[test]
    fn extent_mismatch_rejected() {
        let a = grid(0.05, 4, |_, _| 0);
        let b = grid(0.02, 5, |_, _| UNLABELED);
        assert!(cross_resolution_compare(&b, &a).is_err());
    }
}
