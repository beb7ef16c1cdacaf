//! Per-channel batch normalization kernels.

use super::Real;
use crate::par;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Running mean and (unbiased) variance of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn update(&mut self, mean: &[f64], var_biased: &[f64], count: usize) {
        let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
        for c in 0..self.mean.len() {
            let m = self.mean[c] as f64;
            let v = self.var[c] as f64;
            self.mean[c] = ((1.0 - BN_MOMENTUM) * m + BN_MOMENTUM * mean[c]) as f32;
            self.var[c] = ((1.0 - BN_MOMENTUM) * v + BN_MOMENTUM * var_biased[c] * unbias) as f32;
        }
    }
}

/// Batch mean and biased variance per channel, accumulated in f64.
pub(crate) fn batch_stats<T: Real>(x: &[T], xd: [usize; 4]) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = xd;
    let hw = h * w;
    let count = (n * hw) as f64;
    let stats = par::map_range(c, |ci| {
        let mut s = 0.0f64;
        for ni in 0..n {
            for &v in &x[(ni * c + ci) * hw..][..hw] {
                s += v.to_f64_lossless();
            }
        }
        let mean = s / count;
        let mut q = 0.0f64;
        for ni in 0..n {
            for &v in &x[(ni * c + ci) * hw..][..hw] {
                let d = v.to_f64_lossless() - mean;
                q += d * d;
            }
        }
        (mean, q / count)
    });
    stats.into_iter().unzip()
}

pub(crate) fn inv_std<T: Real>(var: &[f64]) -> Vec<T> {
    var.iter().map(|&v| T::of(1.0 / (v + BN_EPS).sqrt())).collect()
}

/// `y = gamma * (x - mean) * invstd + beta`.
pub(crate) fn apply<T: Real>(
    x: &[T],
    xd: [usize; 4],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    invstd: &[T],
) -> Vec<T> {
    let [_, c, h, w] = xd;
    let mut out = vec![T::zero(); x.len()];
    par::for_each_chunk(&mut out, h * w, |p, plane| {
        let ci = p % c;
        let scale = gamma[ci] * invstd[ci];
        let shift = beta[ci] - mean[ci] * scale;
        for (o, &v) in plane.iter_mut().zip(&x[p * h * w..][..h * w]) {
            *o = v * scale + shift;
        }
    });
    out
}

/// Gradients `(dx, dgamma, dbeta)`. In training mode the statistics depend on `x`.
pub(crate) fn backward<T: Real>(
    gy: &[T],
    x: &[T],
    xd: [usize; 4],
    gamma: &[T],
    mean: &[T],
    invstd: &[T],
    mode: BatchNormMode,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = xd;
    let hw = h * w;
    let sums = par::map_range(c, |ci| {
        let (mut sg, mut sgx) = (0.0f64, 0.0f64);
        for ni in 0..n {
            let off = (ni * c + ci) * hw;
            for (&g, &v) in gy[off..off + hw].iter().zip(&x[off..off + hw]) {
                let g = g.to_f64_lossless();
                sg += g;
                sgx += g * ((v - mean[ci]) * invstd[ci]).to_f64_lossless();
            }
        }
        (sg, sgx)
    });
    let gbeta: Vec<T> = sums.iter().map(|s| T::of(s.0)).collect();
    let ggamma: Vec<T> = sums.iter().map(|s| T::of(s.1)).collect();
    let m = T::of((n * hw) as f64);
    let mut gx = vec![T::zero(); x.len()];
    par::for_each_chunk(&mut gx, hw, |p, plane| {
        let ci = p % c;
        let k = gamma[ci] * invstd[ci];
        let g = &gy[p * hw..][..hw];
        match mode {
            BatchNormMode::Eval => {
                for (o, &gv) in plane.iter_mut().zip(g) {
                    *o = gv * k;
                }
            }
            BatchNormMode::Train => {
                let xs = &x[p * hw..][..hw];
                let (db, dg) = (gbeta[ci], ggamma[ci]);
                for ((o, &gv), &v) in plane.iter_mut().zip(g).zip(xs) {
                    let xhat = (v - mean[ci]) * invstd[ci];
                    *o = k / m * (m * gv - db - xhat * dg);
                }
            }
        }
    });
    (gx, ggamma, gbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_to_zero_mean_unit_variance() {
        let xd = [2, 1, 2, 2];
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let (mean, var) = batch_stats(&x, xd);
        assert_eq!(mean, vec![3.5]);
        assert!((var[0] - 5.25).abs() < 1e-12);
        let y = apply(&x, xd, &[1.0], &[0.0], &[3.5], &inv_std::<f64>(&var));
        let m: f64 = y.iter().sum::<f64>() / 8.0;
        let v: f64 = y.iter().map(|a| a * a).sum::<f64>() / 8.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 5.25 / (5.25 + BN_EPS)).abs() < 1e-12);
    }

    #[test]
    fn running_update_uses_unbiased_variance() {
        let mut rs = RunningStats::new(1);
        rs.update(&[2.0], &[3.0], 4);
        assert!((rs.mean[0] - 0.2).abs() < 1e-7);
        assert!((rs.var[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-6);
    }
}
