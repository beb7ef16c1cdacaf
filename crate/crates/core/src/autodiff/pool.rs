//! Spatial resampling kernels: 2×2 max-pooling, bilinear upsampling,
//! global average pooling and its broadcast inverse.

use std::ops::Range;

use super::{ExactSum, Real};
use crate::par;

/// 2×2, stride-2 max-pooling. Ties keep the first element in row-major order.
///
/// Returns the pooled values, the flat in-plane argmax of each output, and
/// the output dimensions. Odd trailing rows or columns are dropped.
pub(crate) fn maxpool2_forward<T: Real>(x: &[T], xd: [usize; 4]) -> (Vec<T>, Vec<u32>, [usize; 4]) {
    let [n, c, h, w] = xd;
    let (ho, wo) = (h / 2, w / 2);
    let planes = par::map_range(n * c, |p| {
        let src = &x[p * h * w..][..h * w];
        let mut vals = Vec::with_capacity(ho * wo);
        let mut idx = Vec::with_capacity(ho * wo);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let k = (2 * oy + dy) * w + 2 * ox + dx;
                    if src[k] > src[best] {
                        best = k;
                    }
                }
                vals.push(src[best]);
                idx.push(best as u32);
            }
        }
        (vals, idx)
    });
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for (v, i) in planes {
        out.extend(v);
        arg.extend(i);
    }
    (out, arg, [n, c, ho, wo])
}

pub(crate) fn maxpool2_backward<T: Real>(gy: &[T], argmax: &[u32], xd: [usize; 4]) -> Vec<T> {
    let [_, _, h, w] = xd;
    let per_out = (h / 2) * (w / 2);
    let mut gx = vec![T::zero(); xd.iter().product()];
    par::for_each_chunk(&mut gx, h * w, |p, plane| {
        let g = &gy[p * per_out..][..per_out];
        let a = &argmax[p * per_out..][..per_out];
        for (&gv, &k) in g.iter().zip(a) {
            plane[k as usize] = plane[k as usize] + gv;
        }
    });
    gx
}

/// Source taps of one upsampled axis: `(low, high, weight_low, weight_high)`.
///
/// Half-pixel centres: output `o` samples input coordinate
/// `(o + 0.5) / factor - 0.5`, clamped to the valid range.
fn axis_taps<T: Real>(len: usize, factor: usize) -> Vec<(usize, usize, T, T)> {
    (0..len * factor)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            if src <= 0.0 {
                return (0, 0, T::one(), T::zero());
            }
            let lo = src.floor() as usize;
            if lo >= len - 1 {
                return (len - 1, len - 1, T::one(), T::zero());
            }
            let frac = src - lo as f64;
            (lo, lo + 1, T::of(1.0 - frac), T::of(frac))
        })
        .collect()
}

pub(crate) fn upsample_forward<T: Real>(x: &[T], xd: [usize; 4], factor: usize) -> (Vec<T>, [usize; 4]) {
    let [n, c, h, w] = xd;
    let (ho, wo) = (h * factor, w * factor);
    let ty = axis_taps::<T>(h, factor);
    let tx = axis_taps::<T>(w, factor);
    let mut out = vec![T::zero(); n * c * ho * wo];
    par::for_each_chunk(&mut out, ho * wo, |p, plane| {
        let src = &x[p * h * w..][..h * w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let r0 = &src[y0 * w..][..w];
            let r1 = &src[y1 * w..][..w];
            for (o, &(x0, x1, wx0, wx1)) in plane[oy * wo..][..wo].iter_mut().zip(&tx) {
                *o = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    });
    (out, [n, c, ho, wo])
}

pub(crate) fn upsample_backward<T: Real>(gy: &[T], xd: [usize; 4], factor: usize) -> Vec<T> {
    let [_, _, h, w] = xd;
    let (ho, wo) = (h * factor, w * factor);
    let ty = axis_taps::<T>(h, factor);
    let tx = axis_taps::<T>(w, factor);
    let mut gx = vec![T::zero(); xd.iter().product()];
    par::for_each_chunk(&mut gx, h * w, |p, plane| {
        let g = &gy[p * ho * wo..][..ho * wo];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let v = g[oy * wo + ox];
                plane[y0 * w + x0] = plane[y0 * w + x0] + wy0 * wx0 * v;
                plane[y0 * w + x1] = plane[y0 * w + x1] + wy0 * wx1 * v;
                plane[y1 * w + x0] = plane[y1 * w + x0] + wy1 * wx0 * v;
                plane[y1 * w + x1] = plane[y1 * w + x1] + wy1 * wx1 * v;
            }
        }
    });
    gx
}

/// Exact per-plane sums over a rectangular window of each plane.
pub fn plane_sums<T: Real>(x: &[T], xd: [usize; 4], rows: Range<usize>, cols: Range<usize>) -> Vec<ExactSum> {
    let [n, c, h, w] = xd;
    par::map_range(n * c, |p| {
        let src = &x[p * h * w..][..h * w];
        let mut s = ExactSum::default();
        for r in rows.clone() {
            s.extend(&src[r * w + cols.start..r * w + cols.end]);
        }
        s
    })
}

/// Global average pooling to `[n, c, 1, 1]`.
pub(crate) fn gap_forward<T: Real>(x: &[T], xd: [usize; 4]) -> Vec<T> {
    let [_, _, h, w] = xd;
    plane_sums(x, xd, 0..h, 0..w).iter().map(|s| s.mean()).collect()
}

pub(crate) fn gap_backward<T: Real>(gy: &[T], xd: [usize; 4]) -> Vec<T> {
    let [_, _, h, w] = xd;
    let inv = T::one() / T::of((h * w) as f64);
    let mut gx = vec![T::zero(); xd.iter().product()];
    par::for_each_chunk(&mut gx, h * w, |p, plane| plane.fill(gy[p] * inv));
    gx
}

/// Repeats each `[n, c]` value over an `h × w` plane.
pub(crate) fn broadcast_forward<T: Real>(v: &[T], n: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * c * h * w];
    par::for_each_chunk(&mut out, h * w, |p, plane| plane.fill(v[p]));
    out
}

pub(crate) fn broadcast_backward<T: Real>(gy: &[T], od: [usize; 4]) -> Vec<T> {
    let [n, c, h, w] = od;
    par::map_range(n * c, |p| gy[p * h * w..][..h * w].iter().fold(T::zero(), |a, &b| a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_ties_take_first() {
        let x = [1.0f64, 1.0, 1.0, 1.0];
        let (v, a, d) = maxpool2_forward(&x, [1, 1, 2, 2]);
        assert_eq!((v, a, d), (vec![1.0], vec![0], [1, 1, 1, 1]));
        let x = [0.0f64, 2.0, 3.0, 3.0];
        let (_, a, _) = maxpool2_forward(&x, [1, 1, 2, 2]);
        assert_eq!(a, vec![2]);
    }

    #[test]
    fn upsample_reproduces_constants_and_ramps() {
        let x = vec![2.5f64; 9];
        let (y, d) = upsample_forward(&x, [1, 1, 3, 3], 4);
        assert_eq!(d, [1, 1, 12, 12]);
        assert!(y.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        // A linear ramp stays linear away from the clamped borders.
        let x: Vec<f64> = (0..4).map(|i| i as f64).collect();
        let (y, _) = upsample_forward(&x, [1, 1, 1, 4], 2);
        let expect = [0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0];
        for (a, b) in y.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{y:?}");
        }
    }

    #[test]
    fn upsample_weights_depend_on_phase_only() {
        let taps = axis_taps::<f64>(20, 8);
        for o in 8..(20 - 2) * 8 {
            let (l, _, a, b) = taps[o];
            let (l2, _, a2, b2) = taps[o + 8];
            assert_eq!((l + 1, a, b), (l2, a2, b2));
        }
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let xd = [1, 2, 3, 5];
        let x: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let (y, od) = upsample_forward(&x, xd, 3);
        let g: Vec<f64> = (0..od.iter().product::<usize>()).map(|i| ((i * 5) % 13) as f64 - 6.0).collect();
        let gx = upsample_backward(&g, xd, 3);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn gap_and_broadcast() {
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert_eq!(gap_forward(&x, [1, 2, 2, 2]), vec![1.5, 5.5]);
        let b = broadcast_forward(&[1.0f64, 2.0], 1, 2, 2, 2);
        assert_eq!(b, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        assert_eq!(broadcast_backward(&b, [1, 2, 2, 2]), vec![4.0, 8.0]);
    }
}
