use super::EvalError;
use crate::grid_io::{CloudLabelGrid, GridGeometry, Plane, UNLABELED};

/// Default lattice: 30 × 30 sub-areas.
pub const DENSITY_CELLS: usize = 30;

/// Fraction of mispredicted labeled pixels per lattice cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDensityMap {
    pub cell_rows: usize,
    pub cell_cols: usize,
    /// Labeled reference pixels per cell, row-major.
    pub labeled: Vec<u64>,
    pub wrong: Vec<u64>,
    /// Geometry of the lattice itself (one raster cell per sub-area).
    pub geometry: GridGeometry,
}

impl ErrorDensityMap {
    /// Error fraction, `None` for cells without labeled pixels.
    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.cell_cols + col;
        (self.labeled[i] > 0).then(|| self.wrong[i] as f64 / self.labeled[i] as f64)
    }

    pub fn is_empty_cell(&self, row: usize, col: usize) -> bool {
        self.labeled[row * self.cell_cols + col] == 0
    }

    /// Fractions as a plane; empty cells are NaN.
    pub fn to_plane(&self) -> Plane<f32> {
        let mut p = Plane::filled(self.cell_rows, self.cell_cols, f32::NAN);
        for r in 0..self.cell_rows {
            for c in 0..self.cell_cols {
                if let Some(v) = self.value(r, c) {
                    p.set(r, c, v as f32);
                }
            }
        }
        p
    }
}

/// Lattice index of pixel `i` when `n` pixels are cut into `cells`
/// parts of `n / cells`, the last part absorbing the remainder.
fn cell_of(i: usize, n: usize, cells: usize) -> usize {
    (i / (n / cells)).min(cells - 1)
}

pub fn error_density(
    pred: &CloudLabelGrid,
    reference: &CloudLabelGrid,
    cell_rows: usize,
    cell_cols: usize,
) -> Result<ErrorDensityMap, EvalError> {
    pred.geometry.check_matches(&reference.geometry)?;
    let g = reference.geometry;
    if cell_rows == 0 || cell_cols == 0 || g.rows < cell_rows || g.cols < cell_cols {
        return Err(EvalError::GeometryMismatch(format!(
            "{}x{} grid cannot hold a {cell_rows}x{cell_cols} lattice",
            g.rows, g.cols
        )));
    }
    let mut labeled = vec![0u64; cell_rows * cell_cols];
    let mut wrong = vec![0u64; cell_rows * cell_cols];
    for r in 0..g.rows {
        let cr = cell_of(r, g.rows, cell_rows);
        for c in 0..g.cols {
            let truth = reference.labels.get(r, c);
            if truth == UNLABELED {
                continue;
            }
            let k = cr * cell_cols + cell_of(c, g.cols, cell_cols);
            labeled[k] += 1;
            wrong[k] += u64::from(pred.labels.get(r, c) != truth);
        }
    }
    let (sr, sc) = ((g.rows / cell_rows) as f64, (g.cols / cell_cols) as f64);
    let geometry = GridGeometry {
        origin_lat: g.origin_lat + g.cell_lat / 2.0 - sr * g.cell_lat / 2.0,
        origin_lon: g.origin_lon - g.cell_lon / 2.0 + sc * g.cell_lon / 2.0,
        cell_lat: sr * g.cell_lat,
        cell_lon: sc * g.cell_lon,
        rows: cell_rows,
        cols: cell_cols,
    };
    Ok(ErrorDensityMap {
        cell_rows,
        cell_cols,
        labeled,
        wrong,
        geometry,
    })
}

/// `a − b` per cell; NaN where either map has no labeled pixels.
pub fn density_difference(a: &ErrorDensityMap, b: &ErrorDensityMap) -> Result<Plane<f32>, EvalError> {
    if (a.cell_rows, a.cell_cols) != (b.cell_rows, b.cell_cols) {
        return Err(EvalError::GeometryMismatch(format!(
            "{}x{} vs {}x{} lattices",
            a.cell_rows, a.cell_cols, b.cell_rows, b.cell_cols
        )));
    }
    let mut p = Plane::filled(a.cell_rows, a.cell_cols, f32::NAN);
    for r in 0..a.cell_rows {
        for c in 0..a.cell_cols {
            if let (Some(x), Some(y)) = (a.value(r, c), b.value(r, c)) {
                p.set(r, c, (x - y) as f32);
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(rows: usize, cols: usize, labels: Vec<u8>) -> CloudLabelGrid {
        CloudLabelGrid::new(GridGeometry::new(40.0, 120.0, 0.05, rows, cols), labels).unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let g = grid(60, 60, vec![3; 3600]);
        let d = error_density(&g, &g, DENSITY_CELLS, DENSITY_CELLS).unwrap();
        assert!(d.to_plane().data.iter().all(|&v| v == 0.0));
        assert!(density_difference(&d, &d).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_wrong_cell() {
        let r = grid(60, 60, vec![3; 3600]);
        let mut p = r.clone();
        for row in 4..6 {
            for col in 10..12 {
                p.labels.set(row, col, 4);
            }
        }
        let d = error_density(&p, &r, 30, 30).unwrap();
        let plane = d.to_plane();
        let ones: Vec<usize> = (0..900).filter(|&i| plane.data[i] == 1.0).collect();
        assert_eq!(ones, vec![2 * 30 + 5]);
        assert_eq!(plane.data.iter().filter(|&&v| v == 0.0).count(), 899);
    }

    #[test]
    fn brute_force_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, cols) = (67, 95);
        let r: Vec<u8> = (0..rows * cols)
            .map(|_| if rng.gen_bool(0.2) { UNLABELED } else { rng.gen_range(0..3) })
            .collect();
        let p: Vec<u8> = (0..rows * cols).map(|_| rng.gen_range(0..3)).collect();
        let (rg, pg) = (grid(rows, cols, r.clone()), grid(rows, cols, p.clone()));
        let d = error_density(&pg, &rg, 30, 30).unwrap();
        for cr in 0..30 {
            // 67 = 2·30 + 7: cells hold 2 rows, the last one 9.
            let rs = cr * 2..if cr == 29 { rows } else { cr * 2 + 2 };
            for cc in 0..30 {
                let cs = cc * 3..if cc == 29 { cols } else { cc * 3 + 3 };
                let (mut n, mut w) = (0, 0);
                for i in rs.clone() {
                    for j in cs.clone() {
                        let k = i * cols + j;
                        if r[k] != UNLABELED {
                            n += 1;
                            w += u64::from(p[k] != r[k]);
                        }
                    }
                }
                assert_eq!(d.labeled[cr * 30 + cc], n);
                assert_eq!(d.wrong[cr * 30 + cc], w);
                assert_eq!(d.value(cr, cc), (n > 0).then(|| w as f64 / n as f64));
            }
        }
    }

    #[test]
    fn empty_cells_flagged() {
        let r = grid(30, 30, vec![UNLABELED; 900]);
        let d = error_density(&r, &r, 30, 30).unwrap();
        assert!(d.is_empty_cell(7, 7));
        assert!(d.to_plane().data.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn too_small_grid_rejected() {
        let g = grid(20, 40, vec![0; 800]);
        assert!(error_density(&g, &g, 30, 30).is_err());
    }
}
