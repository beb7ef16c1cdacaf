//! Direct 2-D convolution with groups, stride, zero padding and dilation.
//!
//! Every output element accumulates its bias and then its taps in the fixed
//! order (input channel, kernel row, kernel column), whatever its position,
//! so a pixel's value does not depend on how the plane is split into tiles.

use super::{gemm, shape_err, Real, TensorError};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl ConvParams {
    /// Stride 1 with padding that preserves the spatial size of a `kernel`-wide kernel.
    pub fn same(kernel: usize, dilation: usize, groups: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
            groups,
        }
    }
}

/// Output length along one axis, or `None` when the kernel does not fit.
pub fn conv_output_size(input: usize, kernel: usize, p: &ConvParams) -> Option<usize> {
    let extent = p.dilation * (kernel - 1) + 1;
    let padded = input + 2 * p.padding;
    if p.stride == 0 || padded < extent {
        return None;
    }
    Some((padded - extent) / p.stride + 1)
}

pub(crate) fn output_dims(
    x: [usize; 4],
    w: [usize; 4],
    bias: Option<usize>,
    p: &ConvParams,
) -> Result<[usize; 4], TensorError> {
    let [n, cin, h, wi] = x;
    let [cout, cpg, kh, kw] = w;
    if p.groups == 0 || p.dilation == 0 || p.stride == 0 {
        return Err(shape_err("stride, dilation and groups must be positive"));
    }
    if cin % p.groups != 0 || cout % p.groups != 0 {
        return Err(shape_err(format!(
            "channels {cin}->{cout} not divisible by {} groups",
            p.groups
        )));
    }
    if cpg != cin / p.groups {
        return Err(shape_err(format!(
            "weight expects {cpg} input channels per group, input has {}",
            cin / p.groups
        )));
    }
    if let Some(b) = bias {
        if b != cout {
            return Err(shape_err(format!("bias has {b} entries for {cout} outputs")));
        }
    }
    let ho = conv_output_size(h, kh, p)
        .ok_or_else(|| shape_err(format!("kernel {kh} (dilation {}) exceeds height {h}", p.dilation)))?;
    let wo = conv_output_size(wi, kw, p)
        .ok_or_else(|| shape_err(format!("kernel {kw} (dilation {}) exceeds width {wi}", p.dilation)))?;
    Ok([n, cout, ho, wo])
}

/// Output indices `o` in `[lo, hi)` whose input index `o * stride + off` is inside `0..len`.
fn valid_range(off: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let last = len as isize - 1 - off;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    let hi = (hi as usize).min(out_len);
    let lo = (lo as usize).min(hi);
    (lo, hi)
}

fn row_block(width: usize) -> usize {
    (4096 / width.max(1)).max(1)
}

fn tap_offset(k: usize, p: &ConvParams) -> isize {
    (k * p.dilation) as isize - p.padding as isize
}

/// `out[o_lo..o_hi] += w * inp[...]` along one row.
#[inline]
fn axpy_row<T: Real>(out: &mut [T], inp: &[T], wv: T, o_lo: usize, o_hi: usize, off: isize, stride: usize) {
    if o_lo >= o_hi {
        return;
    }
    if stride == 1 {
        let i0 = (o_lo as isize + off) as usize;
        for (o, &x) in out[o_lo..o_hi].iter_mut().zip(&inp[i0..i0 + (o_hi - o_lo)]) {
            *o = *o + wv * x;
        }
    } else {
        for (ox, o) in out.iter_mut().enumerate().take(o_hi).skip(o_lo) {
            let ix = (ox * stride) as isize + off;
            *o = *o + wv * inp[ix as usize];
        }
    }
}

fn is_pointwise(wd: [usize; 4], p: &ConvParams) -> bool {
    wd[2] == 1 && wd[3] == 1 && p.stride == 1 && p.padding == 0 && p.groups == 1
}

/// Rows per parallel task for a matrix with `rows` rows: the largest divisor up to 32.
fn row_split(rows: usize) -> usize {
    (1..=rows.min(32)).rev().find(|d| rows % d == 0).unwrap_or(1)
}

/// Pointwise convolution as one matrix product per image.
fn pointwise_forward<T: Real>(x: &[T], xd: [usize; 4], w: &[T], cout: usize, bias: Option<&[T]>) -> Vec<T> {
    let [n, cin, h, wi] = xd;
    let px = h * wi;
    let rb = row_split(cout);
    let mut out = vec![T::zero(); n * cout * px];
    par::for_each_chunk(&mut out, rb * px, |idx, block| {
        let blocks_per_image = cout / rb;
        let (ni, co0) = (idx / blocks_per_image, (idx % blocks_per_image) * rb);
        if let Some(b) = bias {
            for (r, row) in block.chunks_mut(px).enumerate() {
                row.fill(b[co0 + r]);
            }
        }
        let xn = &x[ni * cin * px..][..cin * px];
        gemm(rb, cin, px, (&w[co0 * cin..], cin, 1), (xn, px, 1), block, px, bias.is_some());
    });
    out
}

fn pointwise_backward_input<T: Real>(gy: &[T], xd: [usize; 4], w: &[T], cout: usize) -> Vec<T> {
    let [n, cin, h, wi] = xd;
    let px = h * wi;
    let rb = row_split(cin);
    let mut gx = vec![T::zero(); n * cin * px];
    par::for_each_chunk(&mut gx, rb * px, |idx, block| {
        let blocks_per_image = cin / rb;
        let (ni, ci0) = (idx / blocks_per_image, (idx % blocks_per_image) * rb);
        let gn = &gy[ni * cout * px..][..cout * px];
        gemm(rb, cout, px, (&w[ci0..], 1, cin), (gn, px, 1), block, px, false);
    });
    gx
}

fn pointwise_backward_weight<T: Real>(gy: &[T], x: &[T], xd: [usize; 4], cout: usize) -> Vec<T> {
    let [n, cin, h, wi] = xd;
    let px = h * wi;
    let rb = row_split(cout);
    let mut gw = vec![T::zero(); cout * cin];
    par::for_each_chunk(&mut gw, rb * cin, |idx, block| {
        let co0 = idx * rb;
        for ni in 0..n {
            let gn = &gy[(ni * cout + co0) * px..][..rb * px];
            let xn = &x[ni * cin * px..][..cin * px];
            gemm(rb, px, cin, (gn, px, 1), (xn, 1, px), block, cin, ni > 0);
        }
    });
    gw
}

pub(crate) fn forward<T: Real>(
    x: &[T],
    xd: [usize; 4],
    w: &[T],
    wd: [usize; 4],
    bias: Option<&[T]>,
    p: ConvParams,
    od: [usize; 4],
) -> Vec<T> {
    let [_, cin, h, wi] = xd;
    let [cout, cpg, kh, kw] = wd;
    let [n, _, ho, wo] = od;
    if is_pointwise(wd, &p) {
        return pointwise_forward(x, xd, w, cout, bias);
    }
    let cout_pg = cout / p.groups;
    let mut out = vec![T::zero(); n * cout * ho * wo];
    let rb = row_block(wo);
    par::for_each_chunk(&mut out, ho * wo, |idx, plane| {
        let (ni, co) = (idx / cout, idx % cout);
        let group = co / cout_pg;
        if let Some(b) = bias {
            plane.fill(b[co]);
        }
        for r0 in (0..ho).step_by(rb) {
            let r1 = (r0 + rb).min(ho);
            for cl in 0..cpg {
                let ci = group * cpg + cl;
                let xin = &x[(ni * cin + ci) * h * wi..][..h * wi];
                for ky in 0..kh {
                    let offy = tap_offset(ky, &p);
                    let (y0, y1) = valid_range(offy, p.stride, h, ho);
                    let (y0, y1) = (y0.max(r0), y1.min(r1));
                    for kx in 0..kw {
                        let wv = w[((co * cpg + cl) * kh + ky) * kw + kx];
                        let offx = tap_offset(kx, &p);
                        let (x0, x1) = valid_range(offx, p.stride, wi, wo);
                        for oy in y0..y1 {
                            let iy = ((oy * p.stride) as isize + offy) as usize;
                            axpy_row(
                                &mut plane[oy * wo..(oy + 1) * wo],
                                &xin[iy * wi..(iy + 1) * wi],
                                wv,
                                x0,
                                x1,
                                offx,
                                p.stride,
                            );
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient with respect to the input.
pub(crate) fn backward_input<T: Real>(
    gy: &[T],
    xd: [usize; 4],
    w: &[T],
    wd: [usize; 4],
    p: ConvParams,
    od: [usize; 4],
) -> Vec<T> {
    let [n, cin, h, wi] = xd;
    let [cout, cpg, kh, kw] = wd;
    let [_, _, ho, wo] = od;
    if is_pointwise(wd, &p) {
        return pointwise_backward_input(gy, xd, w, cout);
    }
    let cout_pg = cout / p.groups;
    let mut gx = vec![T::zero(); n * cin * h * wi];
    par::for_each_chunk(&mut gx, h * wi, |idx, plane| {
        let (ni, ci) = (idx / cin, idx % cin);
        let group = ci / cpg;
        let cl = ci % cpg;
        for co in group * cout_pg..(group + 1) * cout_pg {
            let gout = &gy[(ni * cout + co) * ho * wo..][..ho * wo];
            for ky in 0..kh {
                let offy = tap_offset(ky, &p);
                let (y0, y1) = valid_range(offy, p.stride, h, ho);
                for kx in 0..kw {
                    let wv = w[((co * cpg + cl) * kh + ky) * kw + kx];
                    let offx = tap_offset(kx, &p);
                    let (x0, x1) = valid_range(offx, p.stride, wi, wo);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in y0..y1 {
                        let iy = ((oy * p.stride) as isize + offy) as usize;
                        let grow = &gout[oy * wo..(oy + 1) * wo];
                        let xrow = &mut plane[iy * wi..(iy + 1) * wi];
                        if p.stride == 1 {
                            let i0 = (x0 as isize + offx) as usize;
                            for (d, &gv) in xrow[i0..i0 + (x1 - x0)].iter_mut().zip(&grow[x0..x1]) {
                                *d = *d + wv * gv;
                            }
                        } else {
                            for ox in x0..x1 {
                                let ix = ((ox * p.stride) as isize + offx) as usize;
                                xrow[ix] = xrow[ix] + wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Gradient with respect to the weights.
pub(crate) fn backward_weight<T: Real>(
    gy: &[T],
    x: &[T],
    xd: [usize; 4],
    wd: [usize; 4],
    p: ConvParams,
    od: [usize; 4],
) -> Vec<T> {
    let [n, cin, h, wi] = xd;
    let [cout, cpg, kh, kw] = wd;
    let [_, _, ho, wo] = od;
    if is_pointwise(wd, &p) {
        return pointwise_backward_weight(gy, x, xd, cout);
    }
    let cout_pg = cout / p.groups;
    let per_out = cpg * kh * kw;
    let mut gw = vec![T::zero(); cout * per_out];
    par::for_each_chunk(&mut gw, per_out, |co, acc| {
        let group = co / cout_pg;
        for ni in 0..n {
            let gout = &gy[(ni * cout + co) * ho * wo..][..ho * wo];
            for cl in 0..cpg {
                let ci = group * cpg + cl;
                let xin = &x[(ni * cin + ci) * h * wi..][..h * wi];
                for ky in 0..kh {
                    let offy = tap_offset(ky, &p);
                    let (y0, y1) = valid_range(offy, p.stride, h, ho);
                    for kx in 0..kw {
                        let offx = tap_offset(kx, &p);
                        let (x0, x1) = valid_range(offx, p.stride, wi, wo);
                        let mut s = T::zero();
                        for oy in y0..y1 {
                            let iy = ((oy * p.stride) as isize + offy) as usize;
                            let grow = &gout[oy * wo..(oy + 1) * wo];
                            let xrow = &xin[iy * wi..(iy + 1) * wi];
                            if p.stride == 1 && x0 < x1 {
                                let i0 = (x0 as isize + offx) as usize;
                                s = s + dot(&grow[x0..x1], &xrow[i0..i0 + (x1 - x0)]);
                            } else {
                                for ox in x0..x1 {
                                    let ix = ((ox * p.stride) as isize + offx) as usize;
                                    s = s + grow[ox] * xrow[ix];
                                }
                            }
                        }
                        let k = (cl * kh + ky) * kw + kx;
                        acc[k] = acc[k] + s;
                    }
                }
            }
        }
    });
    gw
}

/// Four-lane dot product; the lane split is fixed, so the result is deterministic.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            lanes[l] = lanes[l] + a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for i in chunks * 4..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

pub(crate) fn backward_bias<T: Real>(gy: &[T], od: [usize; 4]) -> Vec<T> {
    let [n, cout, ho, wo] = od;
    par::map_range(cout, |co| {
        let mut s = T::zero();
        for ni in 0..n {
            for &v in &gy[(ni * cout + co) * ho * wo..][..ho * wo] {
                s = s + v;
            }
        }
        s
    })
}

#[cfg(test)]
pub(crate) mod reference {
    use super::*;

    /// Textbook nested loops, used as an independent oracle.
    pub fn conv_naive(
        x: &[f64],
        xd: [usize; 4],
        w: &[f64],
        wd: [usize; 4],
        b: Option<&[f64]>,
        p: ConvParams,
    ) -> (Vec<f64>, [usize; 4]) {
        let [n, cin, h, wi] = xd;
        let [cout, cpg, kh, kw] = wd;
        let ho = (h + 2 * p.padding - p.dilation * (kh - 1) - 1) / p.stride + 1;
        let wo = (wi + 2 * p.padding - p.dilation * (kw - 1) - 1) / p.stride + 1;
        let mut out = vec![0.0; n * cout * ho * wo];
        for ni in 0..n {
            for co in 0..cout {
                let g = co / (cout / p.groups);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = b.map_or(0.0, |b| b[co]);
                        for cl in 0..cpg {
                            let ci = g * cpg + cl;
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * p.stride + ky * p.dilation) as isize - p.padding as isize;
                                    let ix = (ox * p.stride + kx * p.dilation) as isize - p.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wi as isize {
                                        continue;
                                    }
                                    s += w[((co * cpg + cl) * kh + ky) * kw + kx]
                                        * x[((ni * cin + ci) * h + iy as usize) * wi + ix as usize];
                                }
                            }
                        }
                        out[((ni * cout + co) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        (out, [n, cout, ho, wo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_arithmetic() {
        let p = ConvParams { stride: 2, padding: 1, dilation: 1, groups: 1 };
        assert_eq!(conv_output_size(5, 3, &p), Some(3));
        let p = ConvParams { dilation: 2, ..Default::default() };
        assert_eq!(conv_output_size(5, 3, &p), Some(1));
        assert_eq!(conv_output_size(4, 3, &p), None);
        assert_eq!(conv_output_size(60, 3, &ConvParams::same(3, 18, 1)), Some(60));
    }

    #[test]
    fn valid_ranges() {
        assert_eq!(valid_range(-2, 1, 5, 5), (2, 5));
        assert_eq!(valid_range(2, 1, 5, 5), (0, 3));
        assert_eq!(valid_range(-1, 2, 5, 3), (1, 3));
        assert_eq!(valid_range(7, 1, 5, 5), (0, 0));
        assert_eq!(valid_range(-9, 1, 5, 5), (5, 5));
    }

    #[test]
    fn dims_validation() {
        let p = ConvParams { groups: 2, ..Default::default() };
        assert!(output_dims([1, 3, 4, 4], [2, 1, 1, 1], None, &p).is_err());
        assert!(output_dims([1, 4, 4, 4], [2, 2, 1, 1], Some(3), &p).is_err());
        assert_eq!(output_dims([1, 4, 4, 4], [2, 2, 1, 1], Some(2), &p).unwrap(), [1, 2, 4, 4]);
    }
}
