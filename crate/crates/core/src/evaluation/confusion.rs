use std::fmt::Write as _;

use super::EvalError;
use crate::grid_io::{CloudClass, CloudLabelGrid, CLASS_COUNT, UNLABELED};

/// Pixel counts; rows are reference classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; CLASS_COUNT]; CLASS_COUNT],
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        Self {
            counts: [[0; CLASS_COUNT]; CLASS_COUNT],
        }
    }
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; CLASS_COUNT]; CLASS_COUNT]) -> Self {
        Self { counts }
    }

    /// Counts pixel pairs where the reference is labeled.
    pub fn accumulate(&mut self, pred: &[u8], reference: &[u8]) -> Result<(), EvalError> {
        if pred.len() != reference.len() {
            return Err(EvalError::GeometryMismatch(format!(
                "{} predicted vs {} reference cells",
                pred.len(),
                reference.len()
            )));
        }
        for (i, (&p, &r)) in pred.iter().zip(reference).enumerate() {
            if r == UNLABELED {
                continue;
            }
            if p as usize >= CLASS_COUNT {
                return Err(EvalError::UnlabeledPrediction { index: i });
            }
            if r as usize >= CLASS_COUNT {
                return Err(EvalError::Parse {
                    what: "reference grid",
                    reason: format!("class code {r} at cell {i}"),
                });
            }
            self.counts[r as usize][p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..CLASS_COUNT).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// CSV with a header row and one row per reference class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("reference");
        for c in CloudClass::ALL {
            write!(s, ",{}", c.abbrev()).unwrap();
        }
        s.push('\n');
        for (c, row) in CloudClass::ALL.iter().zip(&self.counts) {
            s.push_str(c.abbrev());
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let bad = |reason: String| EvalError::Parse {
            what: "confusion CSV",
            reason,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        lines.next().ok_or_else(|| bad("empty".into()))?;
        let mut m = Self::default();
        let mut n = 0;
        for (i, line) in lines.enumerate() {
            if i >= CLASS_COUNT {
                return Err(bad("too many rows".into()));
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != CLASS_COUNT + 1 {
                return Err(bad(format!("row {} has {} fields", i + 1, cells.len())));
            }
            for (j, v) in cells[1..].iter().enumerate() {
                m.counts[i][j] = v.parse().map_err(|_| bad(format!("bad count {v:?}")))?;
            }
            n += 1;
        }
        if n != CLASS_COUNT {
            return Err(bad(format!("{n} rows")));
        }
        Ok(m)
    }
}

/// Confusion matrix of `pred` against `reference`, skipping unlabeled reference cells.
pub fn confusion(pred: &CloudLabelGrid, reference: &CloudLabelGrid) -> Result<ConfusionMatrix, EvalError> {
    pred.geometry.check_matches(&reference.geometry)?;
    let mut m = ConfusionMatrix::default();
    m.accumulate(pred.codes(), reference.codes())?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub total: u64,
    /// NaN when `total` is zero.
    pub accuracy: f64,
    /// Clear vs cloudy accuracy.
    pub accuracy_ny: f64,
    pub precision: [f64; CLASS_COUNT],
    pub recall: [f64; CLASS_COUNT],
    pub f1: [f64; CLASS_COUNT],
    pub support: [u64; CLASS_COUNT],
    /// Set where the class was never predicted; precision is then 0.
    pub precision_undefined: [bool; CLASS_COUNT],
    /// Set where the class never occurs in the reference; recall is then 0.
    pub recall_undefined: [bool; CLASS_COUNT],
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub f1_micro: f64,
}

fn ratio(a: u64, b: u64) -> (f64, bool) {
    if b == 0 {
        (0.0, true)
    } else {
        (a as f64 / b as f64, false)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let total = cm.total();
    let mut r = MetricsReport {
        total,
        accuracy: f64::NAN,
        accuracy_ny: f64::NAN,
        precision: [0.0; CLASS_COUNT],
        recall: [0.0; CLASS_COUNT],
        f1: [0.0; CLASS_COUNT],
        support: [0; CLASS_COUNT],
        precision_undefined: [false; CLASS_COUNT],
        recall_undefined: [false; CLASS_COUNT],
        f1_macro: f64::NAN,
        f1_weighted: f64::NAN,
        f1_micro: f64::NAN,
    };
    for j in 0..CLASS_COUNT {
        let tp = cm.counts[j][j];
        r.support[j] = cm.row_sum(j);
        (r.precision[j], r.precision_undefined[j]) = ratio(tp, cm.col_sum(j));
        (r.recall[j], r.recall_undefined[j]) = ratio(tp, r.support[j]);
        let (p, q) = (r.precision[j], r.recall[j]);
        r.f1[j] = if p + q > 0.0 { 2.0 * p * q / (p + q) } else { 0.0 };
    }
    if total == 0 {
        return r;
    }
    let n = total as f64;
    r.accuracy = cm.trace() as f64 / n;
    let clear = CloudClass::Clear.code() as usize;
    let mut ny_hits = cm.counts[clear][clear];
    for (i, row) in cm.counts.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i != clear && j != clear {
                ny_hits += v;
            }
        }
    }
    r.accuracy_ny = ny_hits as f64 / n;
    r.f1_macro = r.f1.iter().sum::<f64>() / CLASS_COUNT as f64;
    r.f1_weighted = (0..CLASS_COUNT).map(|j| r.f1[j] * r.support[j] as f64 / n).sum();
    // Pooled over classes, true positives are the trace and both false
    // positive and false negative totals equal the off-diagonal mass.
    let tp = cm.trace() as f64;
    let (fp, fneg) = (n - tp, n - tp);
    r.f1_micro = 2.0 * tp / (2.0 * tp + fp + fneg);
    r
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "undefined".into()
    } else {
        format!("{v:.6}")
    }
}

impl MetricsReport {
    /// Flat `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("total", self.total.to_string());
        kv("accuracy", fmt_value(self.accuracy));
        kv("accuracy_ny", fmt_value(self.accuracy_ny));
        kv("f1_macro", fmt_value(self.f1_macro));
        kv("f1_weighted", fmt_value(self.f1_weighted));
        kv("f1_micro", fmt_value(self.f1_micro));
        for (j, c) in CloudClass::ALL.iter().enumerate() {
            let a = c.abbrev();
            kv(&format!("support.{a}"), self.support[j].to_string());
            kv(&format!("precision.{a}"), fmt_value(self.precision[j]));
            kv(&format!("recall.{a}"), fmt_value(self.recall[j]));
            kv(&format!("f1.{a}"), fmt_value(self.f1[j]));
            if self.precision_undefined[j] {
                kv(&format!("precision_undefined.{a}"), "true".into());
            }
            if self.recall_undefined[j] {
                kv(&format!("recall_undefined.{a}"), "true".into());
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_io::GridGeometry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(labels: Vec<u8>, rows: usize, cols: usize) -> CloudLabelGrid {
        CloudLabelGrid::new(GridGeometry::new(40.0, 120.0, 0.05, rows, cols), labels).unwrap()
    }

    #[test]
    fn identical_grids_are_diagonal() {
        let labels: Vec<u8> = (0..60).map(|i| (i % 10) as u8).collect();
        let g = grid(labels, 6, 10);
        let m = confusion(&g, &g).unwrap();
        assert_eq!(m.trace(), 60);
        assert_eq!(m.total(), 60);
        assert_eq!(metrics(&m).accuracy, 1.0);
    }

    #[test]
    fn unlabeled_reference_gives_empty_matrix() {
        let r = grid(vec![UNLABELED; 12], 3, 4);
        let p = grid(vec![UNLABELED; 12], 3, 4);
        let m = confusion(&p, &r).unwrap();
        assert_eq!(m.total(), 0);
        let rep = metrics(&m);
        assert!(rep.accuracy.is_nan());
        assert!(rep.precision_undefined.iter().all(|&f| f));
        assert!(rep.to_key_value().contains("accuracy=undefined"));
    }

    #[test]
    fn unlabeled_prediction_is_rejected() {
        let r = grid(vec![1, 2, UNLABELED, 3], 2, 2);
        let p = grid(vec![1, UNLABELED, UNLABELED, 3], 2, 2);
        assert!(matches!(confusion(&p, &r), Err(EvalError::UnlabeledPrediction { index: 1 })));
    }

    #[test]
    fn geometry_must_match() {
        let a = grid(vec![0; 6], 2, 3);
        let b = grid(vec![0; 6], 3, 2);
        assert!(confusion(&a, &b).is_err());
    }

    #[test]
    fn random_grid_total_counts_labeled_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r: Vec<u8> = (0..500)
            .map(|_| if rng.gen_bool(0.3) { UNLABELED } else { rng.gen_range(0..10) })
            .collect();
        let p: Vec<u8> = (0..500).map(|_| rng.gen_range(0..10)).collect();
        let labeled = r.iter().filter(|&&v| v != UNLABELED).count() as u64;
        let m = confusion(&grid(p, 20, 25), &grid(r, 20, 25)).unwrap();
        assert_eq!(m.total(), labeled);
    }

    #[test]
    fn csv_round_trip() {
        let mut m = ConfusionMatrix::default();
        m.counts[3][7] = 11;
        m.counts[9][9] = 4;
        let text = m.to_csv();
        assert_eq!(text.lines().count(), 11);
        assert_eq!(ConfusionMatrix::from_csv(&text).unwrap(), m);
    }

    #[test]
    fn hand_computed_two_class_case() {
        let mut m = ConfusionMatrix::default();
        m.counts[0][0] = 8;
        m.counts[0][1] = 2;
        m.counts[1][0] = 4;
        m.counts[1][1] = 6;
        let r = metrics(&m);
        assert!((r.precision[0] - 8.0 / 12.0).abs() < 1e-15);
        assert!((r.recall[1] - 0.6).abs() < 1e-15);
        let f1_0 = 2.0 * (8.0 / 12.0) * 0.8 / (8.0 / 12.0 + 0.8);
        let f1_1 = 2.0 * 0.75 * 0.6 / 1.35;
        assert!((r.f1_macro - (f1_0 + f1_1) / 10.0).abs() < 1e-15);
        assert!((r.f1_weighted - (f1_0 * 0.5 + f1_1 * 0.5)).abs() < 1e-15);
        assert!(r.precision_undefined[5] && r.recall_undefined[5]);
        assert_eq!(r.accuracy_ny, 0.7);
    }

    fn matrix() -> impl Strategy<Value = [[u64; 10]; 10]> {
        proptest::array::uniform10(proptest::array::uniform10(0u64..1000))
    }

    proptest! {
        #[test]
        fn micro_f1_is_accuracy(counts in matrix()) {
            let r = metrics(&ConfusionMatrix::from_counts(counts));
            if r.total > 0 {
                prop_assert_eq!(r.f1_micro, r.accuracy);
            }
        }

        #[test]
        fn relabeling_permutes_metrics(counts in matrix(), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (1..10).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            // Clear sky keeps its place so the clear/cloudy split is preserved.
            perm.insert(0, 0);
            let mut permuted = [[0u64; 10]; 10];
            for i in 0..10 {
                for j in 0..10 {
                    permuted[perm[i]][perm[j]] = counts[i][j];
                }
            }
            let a = metrics(&ConfusionMatrix::from_counts(counts));
            let b = metrics(&ConfusionMatrix::from_counts(permuted));
            for j in 0..10 {
                prop_assert_eq!(a.f1[j], b.f1[perm[j]]);
                prop_assert_eq!(a.recall[j], b.recall[perm[j]]);
            }
            prop_assert!((a.f1_macro - b.f1_macro).abs() < 1e-12);
            prop_assert!((a.f1_weighted - b.f1_weighted).abs() < 1e-12);
            prop_assert_eq!(a.f1_micro, b.f1_micro);
            prop_assert_eq!(a.accuracy_ny, b.accuracy_ny);
        }

        #[test]
        fn values_within_unit_interval(counts in matrix()) {
            let r = metrics(&ConfusionMatrix::from_counts(counts));
            for v in r.precision.iter().chain(&r.recall).chain(&r.f1) {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }
}
