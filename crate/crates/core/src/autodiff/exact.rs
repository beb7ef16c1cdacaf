use super::Real;

const SCALE: f64 = 18_446_744_073_709_551_616.0; // 2^64

/// Order-independent sum on a 2^-64 fixed-point grid.
///
/// Each value is truncated to a multiple of 2^-64 and accumulated in an
/// `i128`, so partial sums can be merged in any order with an identical
/// result. Magnitudes must stay below 2^62 per value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExactSum {
    acc: i128,
    count: u64,
}

impl ExactSum {
    pub fn add<T: Real>(&mut self, v: T) {
        self.acc += (v.to_f64_lossless() * SCALE) as i128;
        self.count += 1;
    }

    pub fn extend<T: Real>(&mut self, values: &[T]) {
        for &v in values {
            self.add(v);
        }
    }

    pub fn merge(&mut self, other: &ExactSum) {
        self.acc += other.acc;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum(&self) -> f64 {
        self.acc as f64 / SCALE
    }

    /// Mean over the accumulated values; 0 when empty.
    pub fn mean<T: Real>(&self) -> T {
        if self.count == 0 {
            return T::zero();
        }
        T::of(self.acc as f64 / SCALE / self.count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn merge_order_does_not_matter(values in proptest::collection::vec(-1e6f32..1e6, 1..200), split in 0usize..200) {
            let split = split.min(values.len());
            let mut whole = ExactSum::default();
            whole.extend(&values);
            let mut a = ExactSum::default();
            a.extend(&values[split..]);
            let mut b = ExactSum::default();
            b.extend(&values[..split]);
            a.merge(&b);
            prop_assert_eq!(a, whole);
            prop_assert_eq!(a.mean::<f32>().to_bits(), whole.mean::<f32>().to_bits());
        }
    }

    #[test]
    fn mean_of_constant() {
        let mut s = ExactSum::default();
        s.extend(&[0.3f64; 7]);
        assert!((s.mean::<f64>() - 0.3).abs() < 1e-15);
        assert_eq!(ExactSum::default().mean::<f32>(), 0.0);
    }
}
